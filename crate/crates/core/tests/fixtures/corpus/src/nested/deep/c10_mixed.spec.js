const data = require('../../../__fixtures__/data.json');

describe('rows', () => {
  test('has three rows', () => {
    expect(data.rows).toHaveLength(3);
  });

  describe('first row', () => {
    test('is one', () => {
      expect(data.rows[0]).toBe(1);
    });
  });

  describe('last row', () => {
    test('is three', () => {
      expect(data.rows[2]).toBe(3);
    });
  });
});

test('between describes', () => {
  expect(data).toBeDefined();
});

describe('sum', () => {
  test('adds up to six', () => {
    expect(data.rows.reduce((a, b) => a + b, 0)).toBe(6);
  });

  test('is even', () => {
    expect(data.rows.reduce((a, b) => a + b, 0) % 2).toBe(0);
  });
});

describe('max', () => {
  test('is three', () => {
    expect(Math.max(...data.rows)).toBe(3);
  });
});

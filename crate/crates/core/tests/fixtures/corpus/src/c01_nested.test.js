const { add } = require('../lib/math');

describe('outer', () => {
  test('adds small numbers', () => {
    expect(add(1, 2)).toBe(3);
  });

  describe('middle', () => {
    test('adds zero', () => {
      expect(add(5, 0)).toBe(5);
    });

    describe('inner', () => {
      it('adds negatives', () => {
        expect(add(-1, -2)).toBe(-3);
      });
      it('adds mixed signs', () => {
        expect(add(-1, 2)).toBe(1);
      });
      it('is commutative', () => {
        expect(add(2, 7)).toBe(add(7, 2));
      });
    });

    test('adds large numbers', () => {
      expect(add(1e9, 1e9)).toBe(2e9);
    });
  });

  test('adds floats', () => {
    expect(add(0.5, 0.25)).toBe(0.75);
  });
});

describe('sibling', () => {
  test('adds identity', () => {
    expect(add(0, 7)).toBe(7);
  });
});

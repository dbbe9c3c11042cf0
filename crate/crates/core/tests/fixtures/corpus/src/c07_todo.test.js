describe('planned work', () => {
  test.todo('handles unicode');

  test('handles ascii', () => {
    expect('abc'.length).toBe(3);
  });

  test.todo('handles emoji');
});

test.todo('top-level todo');

test('top-level real test', () => {
  expect([].length).toBe(0);
});

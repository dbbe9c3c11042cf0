const fs = require('fs');
const path = require('path');

test('records a shared state file', () => {
  fs.writeFileSync(path.join(__dirname, `.state-${process.pid}`), 'dirty');
});

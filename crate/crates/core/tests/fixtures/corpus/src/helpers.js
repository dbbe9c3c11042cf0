module.exports = { noop() {} };

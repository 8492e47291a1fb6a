// Regenerates coercion.json with node: node make_coercion.js > coercion.json
const values = {
  'undefined': undefined, 'null': null, 'true': true, 'false': false,
  '0': 0, '1': 1, '-2.5': -2.5, 'NaN': NaN, '""': '', '"3"': '3', '"abc"': 'abc',
  '" 12 "': ' 12 ', '{}': {}, '[]': [], '[2]': [2],
};
const ops = ['+', '-', '*', '/', '%', '<', '>', '<=', '>=', '==', '!=', '===', '!=='];
function enc(v) {
  if (typeof v === 'number') {
    if (Number.isNaN(v)) return { number: 'NaN' };
    if (!Number.isFinite(v)) return { number: v > 0 ? 'Infinity' : '-Infinity' };
    if (Object.is(v, -0)) return { number: '-0' };
    return { number: v };
  }
  if (typeof v === 'string') return { string: v };
  if (typeof v === 'boolean') return { boolean: v };
  throw new Error('unexpected result ' + typeof v);
}
const rows = [];
for (const a of Object.keys(values)) {
  for (const b of Object.keys(values)) {
    for (const op of ops) {
      const r = new Function('a', 'b', 'return a ' + op + ' b;')(values[a], values[b]);
      rows.push({ a, b, op, result: enc(r) });
    }
  }
}
console.log(JSON.stringify({ node: process.version, rows }, null, 0));

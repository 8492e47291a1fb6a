// Returns the words of the dictionary that start with a prefix.
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond({ error: 'expected a JSON object' });
    return;
  }
  let prefix = body.prefix;
  let limit = body.limit;
  if (typeof prefix !== 'string') {
    c.respond({ error: 'missing prefix' });
    return;
  }
  if (prefix.length === 0 || prefix.length > 32) {
    c.respond({ error: 'prefix must have 1 to 32 characters' });
    return;
  }
  if (limit === undefined) {
    limit = 10;
  }
  if (typeof limit !== 'number' || limit < 1 || limit > 50) {
    c.respond({ error: 'limit must be between 1 and 50' });
    return;
  }
  prefix = prefix.toLowerCase();
  c.get('words.json', function(words) {
    if (words === undefined) {
      c.respond({ error: 'dictionary unavailable' });
      return;
    }
    let out = [];
    for (let i = 0; i < words.length && out.length < limit; i = i + 1) {
      let w = words[i];
      if (w.startsWith(prefix)) {
        out.push(w);
      }
    }
    c.respond({ prefix: prefix, completions: out });
  });
}

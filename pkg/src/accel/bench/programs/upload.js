// Stores a file received in the request body in cloud storage.
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond({ ok: false, error: 'expected a JSON object' });
    return;
  }
  let name = body.name;
  let content = body.content;
  if (typeof name !== 'string' || name.length === 0) {
    c.respond({ ok: false, error: 'missing file name' });
    return;
  }
  if (typeof content !== 'string') {
    c.respond({ ok: false, error: 'missing file content' });
    return;
  }
  if (content.length > 4096) {
    c.respond({ ok: false, error: 'file too large' });
    return;
  }
  if (name.indexOf('/') >= 0) {
    c.respond({ ok: false, error: 'file name may not contain a slash' });
    return;
  }
  c.post({ url: 'upload/' + name, body: content }, function(resp) {
    if (resp === undefined) {
      c.respond({ ok: false, error: 'upload failed' });
    } else {
      c.respond({ ok: true, name: resp.name, bytes: resp.length });
    }
  });
}

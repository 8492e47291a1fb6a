// Checks a username and password against the password database.
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond('error: expected a JSON object');
    return;
  }
  let u = body.username;
  let p = body.password;
  if (typeof u !== 'string') {
    c.respond('error: missing username');
    return;
  }
  if (typeof p !== 'string') {
    c.respond('error: missing password');
    return;
  }
  if (u.length > 64) {
    c.respond('error: username too long');
    return;
  }
  function F(resp) {
    if (resp[u] === p) {
      c.respond('ok');
    } else {
      c.respond('error');
    }
  }
  c.get('passwords.json', F);
}

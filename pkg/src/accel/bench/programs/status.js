// Sets the build status of a commit on the source hosting service.
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond({ ok: false, error: 'expected a JSON object' });
    return;
  }
  let repo = body.repo;
  let sha = body.sha;
  let state = body.state;
  if (typeof repo !== 'string' || repo.indexOf('/') < 1) {
    c.respond({ ok: false, error: 'repo must look like owner/name' });
    return;
  }
  if (typeof sha !== 'string' || sha.length < 7) {
    c.respond({ ok: false, error: 'bad commit id' });
    return;
  }
  let description = '';
  if (state === 'success') {
    description = 'The build passed';
  } else if (state === 'failure') {
    description = 'The build failed';
  } else if (state === 'pending') {
    description = 'The build is running';
  } else {
    c.respond({ ok: false, error: 'unknown state ' + state });
    return;
  }
  let link = body.url;
  if (link === undefined) {
    link = 'https://ci.example.com/' + repo + '/' + sha.slice(0, 7);
  }
  if (typeof link !== 'string') {
    c.respond({ ok: false, error: 'url must be a string' });
    return;
  }
  let payload = {
    state: state,
    target_url: link,
    description: description,
    context: 'ci/accel'
  };
  c.post({ url: 'repos/' + repo + '/statuses/' + sha, body: payload }, function(resp) {
    if (resp === undefined) {
      c.respond({ ok: false, error: 'status update failed' });
    } else {
      c.respond({ ok: true, id: resp.id, state: resp.state, sha: sha });
    }
  });
}

// Deposits and withdrawals with a version-checked commit. Every operation
// carries a transaction id and its outcome (including a refusal) is stored
// under it, so replaying a request has no further effect.
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond({ ok: false, error: 'expected a JSON object' });
    return;
  }
  let account = body.account;
  let op = body.op;
  let amount = body.amount;
  let txid = body.txid;
  if (typeof account !== 'string' || account.length === 0) {
    c.respond({ ok: false, error: 'missing account' });
    return;
  }
  if (op !== 'deposit' && op !== 'withdraw' && op !== 'balance') {
    c.respond({ ok: false, error: 'unknown operation' });
    return;
  }
  if (op !== 'balance' && (typeof amount !== 'number' || amount <= 0)) {
    c.respond({ ok: false, error: 'amount must be a positive number' });
    return;
  }
  if (typeof txid !== 'string') {
    c.respond({ ok: false, error: 'missing transaction id' });
    return;
  }
  c.get('bank/accounts/' + account + '?txid=' + txid, function(acct) {
    if (acct === undefined) {
      c.respond({ ok: false, error: 'datastore unavailable' });
      return;
    }
    if (acct.applied !== null) {
      c.respond(acct.applied);
      return;
    }
    if (op === 'balance') {
      c.respond({ ok: true, account: account, balance: acct.balance });
      return;
    }
    let balance = acct.balance;
    let refused = false;
    if (op === 'deposit') {
      balance = balance + amount;
    } else if (amount > balance) {
      // a refusal is committed too, so a replay gets the same answer
      refused = true;
    } else {
      balance = balance - amount;
    }
    let commit = {
      account: account,
      txid: txid,
      expectedVersion: acct.version,
      balance: balance,
      refused: refused
    };
    c.post({ url: 'bank/commit', body: commit }, function(result) {
      if (result === undefined) {
        c.respond({ ok: false, error: 'commit failed' });
      } else if (result.ok) {
        c.respond({ ok: true, account: account, balance: result.balance, version: result.version });
      } else if (result.refused) {
        c.respond({ ok: false, error: 'insufficient funds', balance: result.balance });
      } else {
        c.respond({ ok: false, error: 'conflict' });
      }
    });
  });
}

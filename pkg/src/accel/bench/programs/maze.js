// Length of the shortest path between two cells of a maze (breadth-first search).
let c = require('containerless');

function main(req) {
  let body = req.body;
  if (typeof body !== 'object' || body === null) {
    c.respond({ error: 'expected a JSON object' });
    return;
  }
  let start = body.start;
  let goal = body.goal;
  if (!Array.isArray(start) || start.length !== 2) {
    c.respond({ error: 'start must be a [row, column] pair' });
    return;
  }
  if (!Array.isArray(goal) || goal.length !== 2) {
    c.respond({ error: 'goal must be a [row, column] pair' });
    return;
  }
  c.get('maze.json', function(maze) {
    if (maze === undefined) {
      c.respond({ error: 'maze unavailable' });
      return;
    }
    let w = maze.width;
    let h = maze.height;
    let grid = maze.grid;
    let sr = start[0];
    let sc = start[1];
    let gr = goal[0];
    let gc = goal[1];
    if (sr < 0 || sr >= h || sc < 0 || sc >= w) {
      c.respond({ error: 'start is outside the maze' });
      return;
    }
    if (gr < 0 || gr >= h || gc < 0 || gc >= w) {
      c.respond({ error: 'goal is outside the maze' });
      return;
    }
    let from = sr * w + sc;
    let to = gr * w + gc;
    if (grid[from] === '#') {
      c.respond({ error: 'start is a wall' });
      return;
    }
    if (grid[to] === '#') {
      c.respond({ error: 'goal is a wall' });
      return;
    }
    let dist = [];
    for (let i = 0; i < w * h; i = i + 1) {
      dist.push(-1);
    }
    dist[from] = 0;
    let queue = [from];
    let head = 0;
    while (head < queue.length) {
      let cur = queue[head];
      head = head + 1;
      if (cur === to) {
        break;
      }
      let r = Math.floor(cur / w);
      let col = cur - r * w;
      let d = dist[cur] + 1;
      if (r > 0 && grid[cur - w] !== '#' && dist[cur - w] === -1) {
        dist[cur - w] = d;
        queue.push(cur - w);
      }
      if (r < h - 1 && grid[cur + w] !== '#' && dist[cur + w] === -1) {
        dist[cur + w] = d;
        queue.push(cur + w);
      }
      if (col > 0 && grid[cur - 1] !== '#' && dist[cur - 1] === -1) {
        dist[cur - 1] = d;
        queue.push(cur - 1);
      }
      if (col < w - 1 && grid[cur + 1] !== '#' && dist[cur + 1] === -1) {
        dist[cur + 1] = d;
        queue.push(cur + 1);
      }
    }
    c.respond({ start: start, goal: goal, distance: dist[to] });
  });
}

// Session state machine: accumulates the latest snapshot and per-player
// trails. Pure with respect to incoming messages so the rendering layer and
// the replay harness share it.

import type { Hello, StateSnapshot } from "./protocol.js";
import { ArenaView } from "./view.js";

export interface SessionView {
  hello: Hello | null;
  latest: StateSnapshot | null;
  view: ArenaView | null;
  inputEnabled: boolean;
  status: string;
}

export function initialSession(): SessionView {
  return { hello: null, latest: null, view: null, inputEnabled: true, status: "connecting" };
}

export function positionDims(hello: Hello): [number, number] | null {
  // Arena rendering uses the first player's (x, y) dims to set the view box;
  // all players share the same planar bounds in the built-in games.
  for (const name of Object.keys(hello.players)) {
    const dims = hello.players[name].position_dims;
    if (dims && dims.length >= 2) return [dims[0], dims[1]];
  }
  return null;
}

export function applyHello(
  session: SessionView,
  hello: Hello,
  width: number,
  height: number,
  trailLength = 400
): SessionView {
  const dims = positionDims(hello);
  let view: ArenaView | null = null;
  if (dims) {
    const [dx, dy] = dims;
    view = new ArenaView(
      {
        xlo: hello.bounds[dx][0],
        xhi: hello.bounds[dx][1],
        ylo: hello.bounds[dy][0],
        yhi: hello.bounds[dy][1],
      },
      width,
      height,
      trailLength
    );
  } else if (hello.bounds.length >= 1) {
    // 1-D fallback: render the state on a horizontal line.
    view = new ArenaView(
      { xlo: hello.bounds[0][0], xhi: hello.bounds[0][1], ylo: -1, yhi: 1 },
      width,
      height,
      trailLength
    );
  }
  return { hello, latest: null, view, inputEnabled: true, status: "waiting for state" };
}

export function applySnapshot(session: SessionView, snap: StateSnapshot): SessionView {
  const view = session.view;
  if (view) {
    if (snap.tick === 0) {
      view.clear(); // reset or fresh session
    }
    const players = Object.keys(snap.players);
    if (players.length > 0) {
      for (const name of players) {
        const pos = snap.players[name].position;
        if (pos) view.appendTrail(name, pos[0], pos[1]);
      }
    } else {
      view.appendTrail("state", snap.state[0], snap.state.length > 1 ? snap.state[1] : 0);
    }
    if (snap.outcome && snap.outcome.kind === "captured") {
      const first = Object.values(snap.players)[0]?.position;
      const at = first ?? [snap.state[0], snap.state.length > 1 ? snap.state[1] : 0];
      view.markCapture(at[0], at[1]);
    }
  }
  const done = snap.outcome !== null;
  return {
    hello: session.hello,
    latest: snap,
    view,
    inputEnabled: !done,
    status: done ? `outcome: ${snap.outcome!.kind}` : "live",
  };
}

export function statusLine(session: SessionView): string {
  const snap = session.latest;
  if (!snap) return session.status;
  const value = snap.value === null ? "n/a" : snap.value.toFixed(3);
  return `t=${snap.t.toFixed(2)}s  ell=${snap.ell.toFixed(3)}  V=${value}  [${session.status}]`;
}

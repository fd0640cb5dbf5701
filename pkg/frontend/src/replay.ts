// Offline rollout records (the simulator's JSON export) replayed as if they
// were live snapshots, so a recorded episode renders exactly like the session
// that produced it.

import type { OutcomeMsg, PlayerLayout, StateSnapshot } from "./protocol.js";

export interface RolloutRecordJson {
  problem: string;
  dt: number;
  times: number[];
  states: number[][];
  evader_inputs: number[][];
  pursuer_inputs: number[][];
  ell: number[];
  outcome: { kind: string; time: number | null; player: string | null; detail: string };
}

export function snapshotsFromRecord(
  record: RolloutRecordJson,
  players: Record<string, PlayerLayout>
): StateSnapshot[] {
  const snaps: StateSnapshot[] = [];
  const last = record.times.length - 1;
  for (let k = 0; k < record.times.length; k++) {
    const state = record.states[k];
    const perPlayer: StateSnapshot["players"] = {};
    for (const name of Object.keys(players)) {
      const layout = players[name];
      perPlayer[name] = {
        position: layout.position_dims
          ? [state[layout.position_dims[0]], state[layout.position_dims[1]]]
          : null,
        heading: layout.heading_dim !== null ? state[layout.heading_dim] : null,
      };
    }
    const outcome: OutcomeMsg | null =
      k === last
        ? {
            kind: record.outcome.kind as OutcomeMsg["kind"],
            time: record.outcome.time,
            player: record.outcome.player,
            detail: record.outcome.detail,
          }
        : null;
    snaps.push({
      type: "state",
      tick: k,
      t: record.times[k],
      state,
      players: perPlayer,
      ell: record.ell[k],
      value: null,
      outcome,
    });
  }
  return snaps;
}

// Wire protocol shared with the game server (JSON text frames).

export interface PlayerLayout {
  state_dims: number[];
  position_dims: number[] | null;
  heading_dim: number | null;
}

export interface InputChannels {
  lower: number[];
  upper: number[];
}

export interface Hello {
  type: "hello";
  problem: string;
  human_role: "evader" | "pursuer";
  dt: number;
  horizon: number;
  bounds: number[][];
  players: Record<string, PlayerLayout>;
  input_channels: { evader: InputChannels; pursuer: InputChannels };
}

export interface OutcomeMsg {
  kind: "captured" | "out_of_bounds" | "survived" | "aborted";
  time: number | null;
  player: string | null;
  detail: string;
}

export interface StateSnapshot {
  type: "state";
  tick: number;
  t: number;
  state: number[];
  players: Record<string, { position: number[] | null; heading: number | null }>;
  ell: number;
  value: number | null;
  outcome: OutcomeMsg | null;
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMessage = Hello | StateSnapshot | ErrorMsg;

export interface InputMessage {
  type: "input";
  channels: number[];
}

export interface ResetMessage {
  type: "reset";
}

export interface RoleMessage {
  type: "role";
  value: "evader" | "pursuer";
}

export type ClientMessage = InputMessage | ResetMessage | RoleMessage;

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const type = (data as { type?: string }).type;
  if (type === "hello" || type === "state" || type === "error") {
    return data as ServerMessage;
  }
  return null;
}

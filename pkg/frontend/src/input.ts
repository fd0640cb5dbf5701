// Keyboard / gamepad state mapped to input-channel messages, rate-limited to
// the server tick period.

import type { InputChannels } from "./protocol.js";

export interface KeyState {
  left: boolean;
  right: boolean;
  up: boolean;
  down: boolean;
}

export function emptyKeys(): KeyState {
  return { left: false, right: false, up: false, down: false };
}

export function boxCenter(channels: InputChannels): number[] {
  return channels.lower.map((lo, i) => 0.5 * (lo + channels.upper[i]));
}

// Arrow keys snap each channel to its box face; no key pressed sends the box
// center (the server's hold default). Channel 0: left/right, channel 1 (when
// present, e.g. planar wind games): down/up.
export function keysToChannels(keys: KeyState, channels: InputChannels): number[] {
  const out = boxCenter(channels);
  if (channels.lower.length >= 1) {
    if (keys.left && !keys.right) out[0] = channels.upper[0];
    if (keys.right && !keys.left) out[0] = channels.lower[0];
  }
  if (channels.lower.length >= 2) {
    if (keys.up && !keys.down) out[1] = channels.upper[1];
    if (keys.down && !keys.up) out[1] = channels.lower[1];
  }
  return out;
}

// Continuous gamepad axes scaled into the box (axis in [-1, 1] per channel).
export function axesToChannels(axes: number[], channels: InputChannels): number[] {
  return channels.lower.map((lo, i) => {
    const hi = channels.upper[i];
    const a = Math.max(-1, Math.min(1, axes[i] ?? 0));
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * a;
  });
}

// At most one input message per tick period.
export class InputRateLimiter {
  private lastSent = -Infinity;

  constructor(readonly tickSeconds: number) {}

  shouldSend(nowSeconds: number): boolean {
    if (nowSeconds - this.lastSent >= this.tickSeconds - 1e-9) {
      this.lastSent = nowSeconds;
      return true;
    }
    return false;
  }
}

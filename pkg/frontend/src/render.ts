// Canvas drawing: a pure function of the session view (latest snapshot plus
// accumulated trails). Evader blue, pursuer red, captures a black 'x'.

import type { SessionView } from "./client.js";
import { headingGlyph, worldToCanvas } from "./view.js";

const PLAYER_COLORS: Record<string, string> = {
  evader: "#1f5fd0",
  pursuer: "#d03030",
  state: "#1f5fd0",
};

export function draw(ctx: CanvasRenderingContext2D, session: SessionView): void {
  const canvas = ctx.canvas;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const view = session.view;
  const snap = session.latest;
  if (!view || !snap) return;
  const tf = view.transform;

  // arena box
  const [x0, y0] = worldToCanvas(tf, view.box.xlo, view.box.ylo);
  const [x1, y1] = worldToCanvas(tf, view.box.xhi, view.box.yhi);
  ctx.strokeStyle = "#666";
  ctx.lineWidth = 1;
  ctx.strokeRect(Math.min(x0, x1), Math.min(y0, y1), Math.abs(x1 - x0), Math.abs(y1 - y0));

  // trails
  for (const name of view.players()) {
    const trail = view.trail(name);
    if (trail.length < 2) continue;
    ctx.strokeStyle = PLAYER_COLORS[name] ?? "#888";
    ctx.globalAlpha = 0.5;
    ctx.beginPath();
    const [sx, sy] = worldToCanvas(tf, trail[0].x, trail[0].y);
    ctx.moveTo(sx, sy);
    for (const p of trail.slice(1)) {
      const [cx, cy] = worldToCanvas(tf, p.x, p.y);
      ctx.lineTo(cx, cy);
    }
    ctx.stroke();
    ctx.globalAlpha = 1.0;
  }

  // player glyphs
  const players = Object.keys(snap.players);
  if (players.length > 0) {
    for (const name of players) {
      const info = snap.players[name];
      if (!info.position) continue;
      ctx.fillStyle = PLAYER_COLORS[name] ?? "#888";
      if (info.heading !== null) {
        const pts = headingGlyph(tf, info.position[0], info.position[1], info.heading);
        ctx.beginPath();
        ctx.moveTo(pts[0][0], pts[0][1]);
        ctx.lineTo(pts[1][0], pts[1][1]);
        ctx.lineTo(pts[2][0], pts[2][1]);
        ctx.closePath();
        ctx.fill();
      } else {
        const [cx, cy] = worldToCanvas(tf, info.position[0], info.position[1]);
        ctx.beginPath();
        ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
        ctx.fill();
      }
    }
  } else {
    const [cx, cy] = worldToCanvas(tf, snap.state[0], snap.state.length > 1 ? snap.state[1] : 0);
    ctx.fillStyle = PLAYER_COLORS.state;
    ctx.beginPath();
    ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
    ctx.fill();
  }

  // capture marker
  if (view.captureMarker) {
    const [cx, cy] = worldToCanvas(tf, view.captureMarker.x, view.captureMarker.y);
    ctx.strokeStyle = "#000";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(cx - 8, cy - 8);
    ctx.lineTo(cx + 8, cy + 8);
    ctx.moveTo(cx - 8, cy + 8);
    ctx.lineTo(cx + 8, cy - 8);
    ctx.stroke();
  }
}

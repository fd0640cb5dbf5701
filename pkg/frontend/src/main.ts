// DOM wiring: websocket session, keyboard input, reset/role controls, and a
// record-replay loader. All game state lives server-side; this file only
// forwards inputs and renders snapshots.

import { applyHello, applySnapshot, initialSession, statusLine, SessionView } from "./client.js";
import { emptyKeys, InputRateLimiter, keysToChannels, axesToChannels, KeyState } from "./input.js";
import { parseServerMessage, Hello, ClientMessage } from "./protocol.js";
import { snapshotsFromRecord, RolloutRecordJson } from "./replay.js";
import { draw } from "./render.js";

const canvas = document.getElementById("arena") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status") as HTMLDivElement;
const valueEl = document.getElementById("readout") as HTMLDivElement;
const roleSelect = document.getElementById("role") as HTMLSelectElement;
const resetButton = document.getElementById("reset") as HTMLButtonElement;
const replayInput = document.getElementById("replay-file") as HTMLInputElement;
const overlayEl = document.getElementById("overlay") as HTMLDivElement;

let session: SessionView = initialSession();
let socket: WebSocket | null = null;
let keys: KeyState = emptyKeys();
let limiter = new InputRateLimiter(0.02);
let replayTimer: number | null = null;

function send(msg: ClientMessage): void {
  if (socket && socket.readyState === WebSocket.OPEN) {
    socket.send(JSON.stringify(msg));
  }
}

function render(): void {
  draw(ctx, session);
  statusEl.textContent = statusLine(session);
  const snap = session.latest;
  if (snap) {
    const v = snap.value;
    valueEl.textContent = v === null ? "" : `safety margin V = ${v.toFixed(3)}`;
    valueEl.style.color = v !== null && v > 0 ? "#0a7a2f" : "#c02020";
  }
  overlayEl.style.display = session.inputEnabled ? "none" : "flex";
  if (!session.inputEnabled && session.latest?.outcome) {
    overlayEl.textContent = `${session.latest.outcome.kind} — press reset`;
  }
}

function connect(): void {
  if (replayTimer !== null) {
    clearInterval(replayTimer);
    replayTimer = null;
  }
  const role = roleSelect.value as "evader" | "pursuer";
  const url = `ws://${location.host}/ws?role=${role}`;
  socket = new WebSocket(url);
  session = initialSession();
  socket.onmessage = (event) => {
    const msg = parseServerMessage(event.data as string);
    if (!msg) return;
    if (msg.type === "hello") {
      session = applyHello(session, msg, canvas.width, canvas.height);
      limiter = new InputRateLimiter(msg.dt);
    } else if (msg.type === "state") {
      session = applySnapshot(session, msg);
    } else {
      console.warn("server error:", msg.message);
    }
    render();
  };
  socket.onclose = () => {
    overlayEl.style.display = "flex";
    overlayEl.textContent = "disconnected — click to reconnect";
    overlayEl.onclick = () => {
      overlayEl.onclick = null;
      connect();
    };
  };
}

function pumpInput(): void {
  const hello = session.hello;
  if (!hello || !session.inputEnabled) return;
  const now = performance.now() / 1000;
  if (!limiter.shouldSend(now)) return;
  const channels = hello.input_channels[hello.human_role];
  const pads = navigator.getGamepads ? navigator.getGamepads() : [];
  const pad = pads && pads[0];
  const values =
    pad && pad.axes.length > 0
      ? axesToChannels([...pad.axes], channels)
      : keysToChannels(keys, channels);
  send({ type: "input", channels: values });
}

window.addEventListener("keydown", (e) => {
  if (e.key === "ArrowLeft") keys.left = true;
  if (e.key === "ArrowRight") keys.right = true;
  if (e.key === "ArrowUp") keys.up = true;
  if (e.key === "ArrowDown") keys.down = true;
});
window.addEventListener("keyup", (e) => {
  if (e.key === "ArrowLeft") keys.left = false;
  if (e.key === "ArrowRight") keys.right = false;
  if (e.key === "ArrowUp") keys.up = false;
  if (e.key === "ArrowDown") keys.down = false;
});

resetButton.addEventListener("click", () => send({ type: "reset" }));
roleSelect.addEventListener("change", () => {
  send({ type: "role", value: roleSelect.value as "evader" | "pursuer" });
});

replayInput.addEventListener("change", async () => {
  const file = replayInput.files?.[0];
  if (!file) return;
  const record = JSON.parse(await file.text()) as RolloutRecordJson;
  if (socket) socket.close();
  socket = null;
  const hello = session.hello;
  const players = hello ? hello.players : {};
  const snaps = snapshotsFromRecord(record, players);
  session = hello
    ? applyHello(initialSession(), hello, canvas.width, canvas.height)
    : initialSession();
  let k = 0;
  if (replayTimer !== null) clearInterval(replayTimer);
  replayTimer = window.setInterval(() => {
    if (k >= snaps.length) {
      clearInterval(replayTimer!);
      replayTimer = null;
      return;
    }
    session = applySnapshot(session, snaps[k]);
    k += 1;
    render();
  }, record.dt * 1000);
});

function frame(): void {
  pumpInput();
  requestAnimationFrame(frame);
}

connect();
requestAnimationFrame(frame);

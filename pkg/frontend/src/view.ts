// Canvas-space view of the arena: a fixed affine map of the problem's (x, y)
// bounds plus per-player trail polylines. Pure geometry; no drawing here.

export interface ViewBox {
  xlo: number;
  xhi: number;
  ylo: number;
  yhi: number;
}

export interface Transform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitTransform(box: ViewBox, width: number, height: number, margin = 20): Transform {
  const spanX = box.xhi - box.xlo;
  const spanY = box.yhi - box.ylo;
  const scale = Math.min((width - 2 * margin) / spanX, (height - 2 * margin) / spanY);
  // center the arena in the canvas; canvas y grows downward
  const offsetX = (width - scale * spanX) / 2 - scale * box.xlo;
  const offsetY = (height + scale * spanY) / 2 + scale * box.ylo;
  return { scale, offsetX, offsetY };
}

export function worldToCanvas(tf: Transform, x: number, y: number): [number, number] {
  return [tf.offsetX + tf.scale * x, tf.offsetY - tf.scale * y];
}

export interface TrailPoint {
  x: number;
  y: number;
}

export class ArenaView {
  readonly box: ViewBox;
  readonly transform: Transform;
  readonly trailLength: number;
  private trails: Map<string, TrailPoint[]> = new Map();
  captureMarker: TrailPoint | null = null;

  constructor(box: ViewBox, width: number, height: number, trailLength = 400) {
    this.box = box;
    this.transform = fitTransform(box, width, height);
    this.trailLength = trailLength;
  }

  appendTrail(player: string, x: number, y: number): void {
    let trail = this.trails.get(player);
    if (!trail) {
      trail = [];
      this.trails.set(player, trail);
    }
    trail.push({ x, y });
    if (trail.length > this.trailLength) {
      trail.splice(0, trail.length - this.trailLength);
    }
  }

  trail(player: string): TrailPoint[] {
    return this.trails.get(player) ?? [];
  }

  players(): string[] {
    return [...this.trails.keys()];
  }

  markCapture(x: number, y: number): void {
    this.captureMarker = { x, y };
  }

  clear(): void {
    this.trails.clear();
    this.captureMarker = null;
  }
}

// Triangle glyph vertices (canvas coords) for a player at world (x, y, heading).
export function headingGlyph(
  tf: Transform,
  x: number,
  y: number,
  heading: number,
  size = 10
): [number, number][] {
  const [cx, cy] = worldToCanvas(tf, x, y);
  // heading measured counterclockwise in world coords -> negate for canvas y
  const a = -heading;
  const tip: [number, number] = [cx + size * Math.cos(a), cy + size * Math.sin(a)];
  const left: [number, number] = [
    cx + 0.6 * size * Math.cos(a + (2.5 * Math.PI) / 3),
    cy + 0.6 * size * Math.sin(a + (2.5 * Math.PI) / 3),
  ];
  const right: [number, number] = [
    cx + 0.6 * size * Math.cos(a - (2.5 * Math.PI) / 3),
    cy + 0.6 * size * Math.sin(a - (2.5 * Math.PI) / 3),
  ];
  return [tip, left, right];
}

/** Top-down 2D room rendering.
 *
 * Furniture renders as rotated, class-tinted cards with the item's id
 * as the label; style lives entirely in the suggestion ranks and the
 * energy readout, not in the drawing. The context argument is a small
 * structural interface so tests can pass a recording fake instead of a
 * real canvas.
 */

import type { PlacedItem } from "./state.js";

export interface Draw2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  textAlign: CanvasTextAlign;
  textBaseline: CanvasTextBaseline;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(angle: number): void;
}

export const ITEM_W = 84;
export const ITEM_H = 56;
const GRID_STEP = 40;

/** Deterministic per-class tint (hash of the name onto the hue wheel). */
export function classColor(className: string): string {
  let hash = 0;
  for (let i = 0; i < className.length; i++) {
    hash = (hash * 31 + className.charCodeAt(i)) >>> 0;
  }
  return `hsl(${hash % 360}, 45%, 72%)`;
}

function drawBackground(ctx: Draw2D, width: number, height: number): void {
  // plain warehouse floor: neutral wash plus a light grid
  ctx.fillStyle = "#ece9e2";
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = "#dcd8cd";
  ctx.lineWidth = 1;
  for (let x = GRID_STEP; x < width; x += GRID_STEP) {
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
  }
  for (let y = GRID_STEP; y < height; y += GRID_STEP) {
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(width, y);
    ctx.stroke();
  }
}

function drawPlacement(ctx: Draw2D, placed: PlacedItem, selected: boolean): void {
  ctx.save();
  ctx.translate(placed.x, placed.y);
  ctx.rotate((placed.rotation * Math.PI) / 180);
  ctx.fillStyle = classColor(placed.class);
  ctx.fillRect(-ITEM_W / 2, -ITEM_H / 2, ITEM_W, ITEM_H);
  ctx.strokeStyle = selected ? "#1a6ed8" : "#6b675e";
  ctx.lineWidth = selected ? 3 : 1;
  ctx.strokeRect(-ITEM_W / 2, -ITEM_H / 2, ITEM_W, ITEM_H);
  ctx.fillStyle = "#2b2923";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  ctx.fillText(placed.furniture_id, 0, -6);
  ctx.fillText(placed.class, 0, 8);
  ctx.restore();
}

/** Dashed-free tether from an anchored item to the first placement of
 * its supporting furniture id. */
function drawAnchors(ctx: Draw2D, placements: PlacedItem[]): void {
  ctx.strokeStyle = "#a39f93";
  ctx.lineWidth = 1;
  for (const placed of placements) {
    if (placed.anchored_to === null) continue;
    const target = placements.find((p) => p.furniture_id === placed.anchored_to);
    if (!target || target === placed) continue;
    ctx.beginPath();
    ctx.moveTo(placed.x, placed.y);
    ctx.lineTo(target.x, target.y);
    ctx.stroke();
  }
}

export function renderScene(
  ctx: Draw2D,
  width: number,
  height: number,
  placements: PlacedItem[],
  selectedPids: string[],
): void {
  drawBackground(ctx, width, height);
  drawAnchors(ctx, placements);
  const selected = new Set(selectedPids);
  for (const placed of placements) {
    drawPlacement(ctx, placed, selected.has(placed.pid));
  }
}

/** Topmost placement under a point; later placements draw on top.
 * Bounds are axis-aligned (rotation is cosmetic for picking). */
export function hitTest(placements: PlacedItem[], x: number, y: number): PlacedItem | null {
  for (let i = placements.length - 1; i >= 0; i--) {
    const p = placements[i]!;
    if (Math.abs(x - p.x) <= ITEM_W / 2 && Math.abs(y - p.y) <= ITEM_H / 2) {
      return p;
    }
  }
  return null;
}

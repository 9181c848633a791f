/** Client-side scene state with snapshot undo and redo.
 *
 * Every mutation pushes a full snapshot of what the user currently
 * sees, placements, selection, scene name, and the energy readout, so
 * one undo rewinds both the scene and the displayed energy without a
 * round trip. Selection changes and readout refreshes are deliberately
 * not mutations; they ride along inside whichever snapshot encloses
 * them.
 */

import type { CatalogItem, Placement } from "./api.js";

// contract floor is 50 restorable steps; keep headroom
export const UNDO_DEPTH = 100;

/** One piece of furniture placed in the room. `pid` identifies the
 * placement (the same catalog item may be placed twice); `anchored_to`
 * names the furniture id of the item this one sits on. */
export interface PlacedItem {
  pid: string;
  furniture_id: string;
  class: string;
  thumbnail: string | null;
  x: number;
  y: number;
  rotation: number;
  anchored_to: string | null;
}

export interface SceneSnapshot {
  name: string;
  placements: PlacedItem[];
  selection: string[];
  energyDisplay: string;
}

export function formatEnergy(energy: number): string {
  return energy.toFixed(3);
}

export class SceneStore {
  private name = "untitled scene";
  private placements: PlacedItem[] = [];
  private selection: string[] = [];
  private energyDisplay = formatEnergy(0);
  private undoStack: SceneSnapshot[] = [];
  private redoStack: SceneSnapshot[] = [];
  private pidCounter = 0;
  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  snapshot(): SceneSnapshot {
    return structuredClone({
      name: this.name,
      placements: this.placements,
      selection: this.selection,
      energyDisplay: this.energyDisplay,
    });
  }

  private restore(frame: SceneSnapshot): void {
    this.name = frame.name;
    this.placements = structuredClone(frame.placements);
    this.selection = [...frame.selection];
    this.energyDisplay = frame.energyDisplay;
  }

  /** Open an undo frame; every mutation calls this first. */
  private pushUndo(): void {
    this.undoStack.push(this.snapshot());
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.redoStack = [];
  }

  get sceneName(): string {
    return this.name;
  }

  get energyReadout(): string {
    return this.energyDisplay;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  get canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  allPlacements(): PlacedItem[] {
    return [...this.placements];
  }

  getPlacement(pid: string): PlacedItem | undefined {
    return this.placements.find((p) => p.pid === pid);
  }

  /** Furniture ids in placement order, duplicates included; this is
   * the scene list sent to the ranking and energy endpoints. */
  sceneFurnitureIds(): string[] {
    return this.placements.map((p) => p.furniture_id);
  }

  selectedPids(): string[] {
    return [...this.selection];
  }

  selectedItems(): PlacedItem[] {
    return this.selection
      .map((pid) => this.getPlacement(pid))
      .filter((p): p is PlacedItem => p !== undefined);
  }

  /** Selection is view state, not scene content; it does not open an
   * undo frame. */
  select(pids: string[]): void {
    this.selection = pids.filter((pid) => this.getPlacement(pid) !== undefined);
    this.notify();
  }

  toggleSelect(pid: string): void {
    if (this.getPlacement(pid) === undefined) return;
    const at = this.selection.indexOf(pid);
    if (at >= 0) this.selection.splice(at, 1);
    else this.selection.push(pid);
    this.notify();
  }

  /** Async readout refreshes land here; the enclosing mutation's undo
   * frame already captured the previous text. */
  setEnergyDisplay(text: string): void {
    this.energyDisplay = text;
    this.notify();
  }

  add(item: CatalogItem, x: number, y: number): PlacedItem {
    this.pushUndo();
    const placed: PlacedItem = {
      pid: `p${++this.pidCounter}`,
      furniture_id: item.furniture_id,
      class: item.class,
      thumbnail: item.thumbnail,
      x,
      y,
      rotation: 0,
      anchored_to: null,
    };
    this.placements.push(placed);
    this.notify();
    return placed;
  }

  remove(pid: string): void {
    const at = this.placements.findIndex((p) => p.pid === pid);
    if (at < 0) return;
    this.pushUndo();
    const gone = this.placements.splice(at, 1)[0]!;
    // anything that sat on the removed item lands back on the floor
    for (const p of this.placements) {
      if (p.anchored_to === gone.furniture_id) p.anchored_to = null;
    }
    this.selection = this.selection.filter((s) => s !== pid);
    this.notify();
  }

  move(pid: string, x: number, y: number): void {
    const placed = this.getPlacement(pid);
    if (!placed) return;
    this.pushUndo();
    placed.x = x;
    placed.y = y;
    this.notify();
  }

  rotate(pid: string, rotation: number): void {
    const placed = this.getPlacement(pid);
    if (!placed) return;
    this.pushUndo();
    placed.rotation = rotation;
    this.notify();
  }

  anchor(pid: string, anchorFurnitureId: string | null): void {
    const placed = this.getPlacement(pid);
    if (!placed) return;
    this.pushUndo();
    placed.anchored_to = anchorFurnitureId;
    this.notify();
  }

  /** Replace the placement's furniture while keeping its spot,
   * rotation, and anchor; the suggestion-accept gesture. */
  swap(pid: string, replacement: CatalogItem): void {
    const placed = this.getPlacement(pid);
    if (!placed) return;
    this.pushUndo();
    placed.furniture_id = replacement.furniture_id;
    placed.class = replacement.class;
    placed.thumbnail = replacement.thumbnail;
    this.notify();
  }

  rename(name: string): void {
    this.pushUndo();
    this.name = name;
    this.notify();
  }

  clear(): void {
    this.pushUndo();
    this.placements = [];
    this.selection = [];
    this.notify();
  }

  /** Swap in a whole saved scene (one undo frame, so a bad load is a
   * single undo away). */
  replaceAll(name: string, placements: Array<Placement & Pick<PlacedItem, "class" | "thumbnail">>): void {
    this.pushUndo();
    this.name = name;
    this.placements = placements.map((p) => ({
      pid: `p${++this.pidCounter}`,
      furniture_id: p.furniture_id,
      class: p.class,
      thumbnail: p.thumbnail,
      x: p.x,
      y: p.y,
      rotation: p.rotation,
      anchored_to: p.anchored_to,
    }));
    this.selection = [];
    this.notify();
  }

  undo(): boolean {
    const frame = this.undoStack.pop();
    if (!frame) return false;
    this.redoStack.push(this.snapshot());
    this.restore(frame);
    this.notify();
    return true;
  }

  redo(): boolean {
    const frame = this.redoStack.pop();
    if (!frame) return false;
    this.undoStack.push(this.snapshot());
    this.restore(frame);
    this.notify();
    return true;
  }

  /** Wire placements as the save endpoint expects them. */
  toPlacements(): Placement[] {
    return this.placements.map((p) => ({
      furniture_id: p.furniture_id,
      x: p.x,
      y: p.y,
      rotation: p.rotation,
      anchored_to: p.anchored_to,
    }));
  }
}

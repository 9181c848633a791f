/** DOM-free studio controller.
 *
 * Owns the workflow: seed selection feeds the suggestion strip, swaps
 * push one undo frame and then refresh the energy readout, saves go
 * through the scene endpoint with client-side name versioning. The
 * canvas and widgets in main.ts only call methods here.
 */

import type { CatalogItem, SavedScene, StyleRankClient, SuggestionItem } from "./api.js";
import { describeError } from "./api.js";
import { formatEnergy, SceneStore } from "./state.js";
import { SequenceGate, SuggestionFeed } from "./suggestions.js";

export class Studio {
  readonly store = new SceneStore();
  readonly feed = new SuggestionFeed();
  /** One transient status or error line for the header. */
  banner = "";
  /** furniture_id -> catalog metadata, filled by loadCatalog. */
  readonly catalog = new Map<string, CatalogItem>();
  classes: string[] = [];
  lastSavedId: string | null = null;

  private energyGate = new SequenceGate();
  private savedNames = new Map<string, number>();
  private listeners: Array<() => void> = [];

  constructor(private readonly api: StyleRankClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  private setBanner(text: string): void {
    this.banner = text;
    this.notify();
  }

  /** Page through the whole catalog once; the cache backs scene loads
   * and the browser panel. */
  async loadCatalog(): Promise<CatalogItem[]> {
    try {
      const info = await this.api.indexInfo();
      this.classes = info.classes;
      const items: CatalogItem[] = [];
      let page = 1;
      let pages = 1;
      do {
        const result = await this.api.listFurniture({ page });
        pages = result.pages;
        for (const item of result.items) {
          this.catalog.set(item.furniture_id, item);
          items.push(item);
        }
        page += 1;
      } while (page <= pages);
      this.setBanner("");
      return items;
    } catch (err) {
      this.setBanner(describeError(err));
      return [];
    }
  }

  /** Seed-first flow: rank classmates of a catalog item before
   * anything is placed. */
  async suggestForSeed(seedId: string, className: string, k?: number): Promise<void> {
    await this.feed.load(() => this.api.suggestSingle(seedId, className, { k }));
  }

  /** Selection-driven flow: one selected object queries the single-seed
   * ranking; a multi-selection sends every selected furniture id in the
   * request body. The class defaults to the primary selection's class,
   * so selecting a coffee table yields only coffee tables. */
  async suggestForSelection(className?: string, k?: number): Promise<void> {
    const selected = this.store.selectedItems();
    if (selected.length === 0) {
      this.feed.clear();
      this.setBanner("select an object to get suggestions");
      return;
    }
    const primary = selected[0]!;
    const cls = className ?? primary.class;
    this.setBanner("");
    if (selected.length === 1) {
      await this.feed.load(() => this.api.suggestSingle(primary.furniture_id, cls, { k }));
    } else {
      const scene = selected.map((p) => p.furniture_id);
      await this.feed.load(() => this.api.suggestMulti(scene, cls, { k }));
    }
  }

  /** Accept a suggestion: swap the primary selected placement for the
   * suggested item (one undo frame), refresh the energy readout, and
   * re-query the strip so the next choice sees the new scene. */
  async acceptSuggestion(item: SuggestionItem): Promise<void> {
    const pid = this.store.selectedPids()[0];
    if (pid === undefined || this.store.getPlacement(pid) === undefined) {
      this.setBanner("the selected object is gone; refresh the suggestions");
      return;
    }
    this.store.swap(pid, item);
    await this.refreshEnergy();
    await this.suggestForSelection();
  }

  /** Place a catalog item, select it, and refresh dependent state. */
  async placeItem(item: CatalogItem, x: number, y: number): Promise<void> {
    const placed = this.store.add(item, x, y);
    this.store.select([placed.pid]);
    await this.refreshEnergy();
    await this.suggestForSelection();
  }

  async removeSelected(): Promise<void> {
    for (const pid of this.store.selectedPids()) this.store.remove(pid);
    this.feed.clear();
    await this.refreshEnergy();
  }

  /** Re-fetch the scene energy; the readout always mirrors a service
   * response (or says so when it cannot). */
  async refreshEnergy(): Promise<void> {
    const token = this.energyGate.next();
    try {
      const result = await this.api.sceneEnergy(this.store.sceneFurnitureIds());
      if (this.energyGate.current(token)) {
        this.store.setEnergyDisplay(formatEnergy(result.energy));
      }
    } catch (err) {
      if (this.energyGate.current(token)) {
        this.store.setEnergyDisplay("n/a");
        this.setBanner(describeError(err));
      }
    }
  }

  /** Undo restores the snapshot's energy readout directly, so any
   * energy fetch still in flight must not land afterwards. */
  undo(): boolean {
    this.energyGate.invalidate();
    const done = this.store.undo();
    this.notify();
    return done;
  }

  redo(): boolean {
    this.energyGate.invalidate();
    const done = this.store.redo();
    this.notify();
    return done;
  }

  /** Save under the current name; a name that was already saved this
   * session gets a versioned copy instead (the store is append-only,
   * nothing is ever overwritten). */
  async saveScene(): Promise<SavedScene | null> {
    const base = this.store.sceneName;
    const seen = this.savedNames.get(base) ?? 0;
    const effective = seen === 0 ? base : `${base} (v${seen + 1})`;
    try {
      const saved = await this.api.saveScene(effective, this.store.toPlacements());
      this.savedNames.set(base, seen + 1);
      this.lastSavedId = saved.id;
      this.setBanner(`saved ${saved.id} as "${saved.name}"`);
      return saved;
    } catch (err) {
      this.setBanner(describeError(err));
      return null;
    }
  }

  /** Load a saved scene into the store (one undo frame). Catalog
   * metadata comes from the cache; the save endpoint already refused
   * unknown furniture, so misses only happen against a changed index. */
  async loadScene(sceneId: string): Promise<boolean> {
    let scene: SavedScene;
    try {
      scene = await this.api.loadScene(sceneId);
    } catch (err) {
      this.setBanner(describeError(err));
      return false;
    }
    const placements = scene.placements.map((p) => {
      const meta = this.catalog.get(p.furniture_id);
      return {
        ...p,
        class: meta?.class ?? "unknown",
        thumbnail: meta?.thumbnail ?? null,
      };
    });
    this.energyGate.invalidate();
    this.store.replaceAll(scene.name, placements);
    this.feed.clear();
    this.setBanner(`loaded ${scene.id}`);
    await this.refreshEnergy();
    return true;
  }
}

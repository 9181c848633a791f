/** Browser entry point: wires the studio controller to the page. */

import { StyleRankClient } from "./api.js";
import type { CatalogItem } from "./api.js";
import { hitTest, renderScene } from "./canvas.js";
import { Studio } from "./studio.js";

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function main(): void {
  const api = new StyleRankClient("");
  const studio = new Studio(api);

  const canvas = el<HTMLCanvasElement>("room");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");

  const catalogList = el<HTMLUListElement>("catalog");
  const classFilter = el<HTMLSelectElement>("class-filter");
  const strip = el<HTMLUListElement>("suggestions");
  const stripStatus = el<HTMLParagraphElement>("strip-status");
  const energyOut = el<HTMLSpanElement>("energy");
  const banner = el<HTMLParagraphElement>("banner");
  const sceneName = el<HTMLInputElement>("scene-name");
  const sceneId = el<HTMLInputElement>("scene-id");

  let catalogItems: CatalogItem[] = [];
  let placeCursor = 0;

  function redrawCanvas(): void {
    renderScene(ctx!, canvas.width, canvas.height,
      studio.store.allPlacements(), studio.store.selectedPids());
  }

  function redrawHeader(): void {
    energyOut.textContent = studio.store.energyReadout;
    banner.textContent = studio.banner;
    banner.hidden = studio.banner === "";
    if (document.activeElement !== sceneName) {
      sceneName.value = studio.store.sceneName;
    }
  }

  function redrawCatalog(): void {
    const wanted = classFilter.value;
    catalogList.replaceChildren();
    for (const item of catalogItems) {
      if (wanted !== "" && item.class !== wanted) continue;
      const li = document.createElement("li");
      const button = document.createElement("button");
      button.textContent = `${item.furniture_id} (${item.class})`;
      button.disabled = !item.rankable;
      button.title = item.rankable ? "" : "no validated photos yet; cannot be ranked";
      button.addEventListener("click", () => {
        const x = 120 + (placeCursor % 5) * 110;
        const y = 100 + Math.floor(placeCursor / 5) * 90;
        placeCursor = (placeCursor + 1) % 25;
        void studio.placeItem(item, x, y);
      });
      li.appendChild(button);
      catalogList.appendChild(li);
    }
  }

  function redrawStrip(): void {
    strip.replaceChildren();
    stripStatus.textContent = studio.feed.status === "ready" ? "" : studio.feed.message;
    // render in response order, never re-sorted
    studio.feed.items.forEach((item, at) => {
      const li = document.createElement("li");
      const button = document.createElement("button");
      button.textContent = `#${at + 1} ${item.furniture_id} (${item.class}) d=${item.distance.toFixed(3)}`;
      button.addEventListener("click", () => void studio.acceptSuggestion(item));
      li.appendChild(button);
      strip.appendChild(li);
    });
  }

  studio.store.onChange(() => {
    redrawCanvas();
    redrawHeader();
  });
  studio.feed.onChange(redrawStrip);
  studio.onChange(redrawHeader);

  canvas.addEventListener("mousedown", (event) => {
    const rect = canvas.getBoundingClientRect();
    const x = event.clientX - rect.left;
    const y = event.clientY - rect.top;
    const hit = hitTest(studio.store.allPlacements(), x, y);
    if (!hit) {
      studio.store.select([]);
      studio.feed.clear();
      return;
    }
    if (event.shiftKey) studio.store.toggleSelect(hit.pid);
    else studio.store.select([hit.pid]);
    void studio.suggestForSelection();

    // drag to move; one undo frame per completed drag
    if (!event.shiftKey) {
      const startX = x;
      const startY = y;
      const origX = hit.x;
      const origY = hit.y;
      const onMove = (move: MouseEvent) => {
        const nx = origX + (move.clientX - rect.left - startX);
        const ny = origY + (move.clientY - rect.top - startY);
        hit.x = nx;
        hit.y = ny;
        redrawCanvas();
      };
      const onUp = () => {
        canvas.removeEventListener("mousemove", onMove);
        window.removeEventListener("mouseup", onUp);
        if (hit.x !== origX || hit.y !== origY) {
          const finalX = hit.x;
          const finalY = hit.y;
          hit.x = origX;
          hit.y = origY;
          studio.store.move(hit.pid, finalX, finalY);
        }
      };
      canvas.addEventListener("mousemove", onMove);
      window.addEventListener("mouseup", onUp);
    }
  });

  window.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) return;
    if (event.key === "Delete" || event.key === "Backspace") {
      void studio.removeSelected();
    } else if (event.key === "r") {
      const pid = studio.store.selectedPids()[0];
      const placed = pid !== undefined ? studio.store.getPlacement(pid) : undefined;
      if (pid !== undefined && placed) {
        studio.store.rotate(pid, (placed.rotation + 15) % 360);
      }
    }
  });

  el<HTMLButtonElement>("undo").addEventListener("click", () => studio.undo());
  el<HTMLButtonElement>("redo").addEventListener("click", () => studio.redo());
  el<HTMLButtonElement>("clear").addEventListener("click", () => {
    studio.store.clear();
    studio.feed.clear();
    void studio.refreshEnergy();
  });
  el<HTMLButtonElement>("save").addEventListener("click", () => {
    void studio.saveScene().then((saved) => {
      if (saved) sceneId.value = saved.id;
    });
  });
  el<HTMLButtonElement>("load").addEventListener("click", () => {
    if (sceneId.value.trim() !== "") void studio.loadScene(sceneId.value.trim());
  });
  sceneName.addEventListener("change", () => {
    if (sceneName.value.trim() !== "") studio.store.rename(sceneName.value.trim());
  });
  classFilter.addEventListener("change", () => {
    redrawCatalog();
    void studio.suggestForSelection(classFilter.value || undefined);
  });

  void studio.loadCatalog().then((items) => {
    catalogItems = items;
    classFilter.replaceChildren(new Option("all classes", ""));
    for (const name of studio.classes) {
      classFilter.appendChild(new Option(name, name));
    }
    redrawCatalog();
    redrawCanvas();
    redrawHeader();
  });
}

main();

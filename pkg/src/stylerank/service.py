"""Read-only HTTP suggestion service plus append-only scene persistence.

The app serves one immutable compatibility index; requests may pin the
index generation they were built against and get 409 back when the
loaded index differs. Scene saves go through a single writer lock into a
JSON-Lines file, the only mutable state in the process.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, Field

from . import compat
from .compat import CompatibilityIndex
from .errors import StaleIndexError, UnknownItemError, UnrankableItemError

DEFAULT_SUGGESTION_LIMIT = 150  # enough variety for a suggestion strip
PAGE_SIZE = 50


class ScenePlacement(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    furniture_id: str
    x: float = 0.0
    y: float = 0.0
    rotation: float = 0.0
    anchored_to: str | None = None


class SceneSaveRequest(BaseModel):
    name: str
    placements: list[ScenePlacement] = Field(default_factory=list)


class MultiSuggestRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    scene: list[str]
    class_name: str = Field(alias="class")
    k: int = Field(default=DEFAULT_SUGGESTION_LIMIT, ge=1)
    generation: int | None = None


class EnergyRequest(BaseModel):
    scene: list[str]
    generation: int | None = None


class SceneStore:
    """Append-only JSON-Lines persistence for saved scenes."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._scenes: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    scene = json.loads(line)
                    self._scenes[scene["id"]] = scene

    def __len__(self) -> int:
        return len(self._scenes)

    def save(self, name: str, placements: list[dict]) -> dict:
        with self._lock:
            scene = {"id": f"scene-{len(self._scenes) + 1:04d}",
                     "name": name, "placements": placements}
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(scene, sort_keys=True) + "\n")
            self._scenes[scene["id"]] = scene
            return scene

    def get(self, scene_id: str) -> dict | None:
        return self._scenes.get(scene_id)


def create_app(index: CompatibilityIndex,
               scene_store: SceneStore | None = None,
               ui_dir=None) -> FastAPI:
    """Build the FastAPI app around one loaded index.

    ``ui_dir`` optionally mounts a static scene-builder frontend at /ui.
    """
    app = FastAPI(title="stylerank suggestion service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def check_generation(generation: int | None) -> None:
        try:
            compat.check_generation(index, generation)
        except StaleIndexError:
            raise HTTPException(
                status_code=409,
                detail={"error": "generation_mismatch",
                        "requested": generation,
                        "index_generation": index.generation})

    def item_payload(furniture_id: str, distance: float | None = None) -> dict:
        payload = {
            "furniture_id": furniture_id,
            "class": index.classes[furniture_id],
            "thumbnail": index.thumbnails.get(furniture_id),
            "rankable": index.is_rankable(furniture_id),
        }
        if distance is not None:
            payload["distance"] = distance
        return payload

    def suggestion_payload(ranked: list[tuple[str, float]]) -> dict:
        return {
            "generation": index.generation,
            "items": [item_payload(fid, dist) for fid, dist in ranked],
        }

    @app.get("/v1/index")
    def index_info():
        return {
            "generation": index.generation,
            "rankable_items": index.n_items,
            "unrankable_items": len(index.unrankable),
            "classes": index.class_names(),
            "embedding_dim": index.embeddings.d if len(index.embeddings) else 0,
            "page_size": PAGE_SIZE,
            "default_k": DEFAULT_SUGGESTION_LIMIT,
        }

    @app.get("/v1/furniture")
    def list_furniture(class_name: str | None = Query(default=None, alias="class"),
                       page: int = Query(default=1, ge=1),
                       generation: int | None = None):
        check_generation(generation)
        ids = index.catalog_ids()
        if class_name is not None:
            if class_name not in set(index.classes.values()):
                raise HTTPException(404, f"unknown furniture class {class_name!r}")
            ids = [fid for fid in ids if index.classes[fid] == class_name]
        total = len(ids)
        start = (page - 1) * PAGE_SIZE
        return {
            "generation": index.generation,
            "page": page,
            "page_size": PAGE_SIZE,
            "total": total,
            "pages": max(1, -(-total // PAGE_SIZE)),
            "items": [item_payload(fid) for fid in ids[start:start + PAGE_SIZE]],
        }

    @app.get("/v1/suggest/single")
    def suggest_single(seed: str,
                       class_name: str = Query(alias="class"),
                       k: int = Query(default=DEFAULT_SUGGESTION_LIMIT, ge=1),
                       generation: int | None = None):
        check_generation(generation)
        try:
            ranked = compat.rank_single_seed(index, seed, class_name, k)
        except UnknownItemError as exc:
            raise HTTPException(404, str(exc)) from exc
        except UnrankableItemError as exc:
            raise HTTPException(422, str(exc)) from exc
        return suggestion_payload(ranked)

    @app.post("/v1/suggest/multi")
    def suggest_multi(request: MultiSuggestRequest):
        check_generation(request.generation)
        try:
            ranked = compat.rank_multi_seed(index, request.scene,
                                            request.class_name, request.k)
        except UnknownItemError as exc:
            raise HTTPException(404, str(exc)) from exc
        except UnrankableItemError as exc:
            raise HTTPException(422, str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return suggestion_payload(ranked)

    @app.post("/v1/scene/energy")
    def energy(request: EnergyRequest):
        check_generation(request.generation)
        try:
            value = compat.scene_energy(index, request.scene)
        except UnknownItemError as exc:
            raise HTTPException(404, str(exc)) from exc
        except UnrankableItemError as exc:
            raise HTTPException(422, str(exc)) from exc
        return {"generation": index.generation, "energy": value,
                "placements": len(request.scene)}

    @app.post("/v1/scenes", status_code=201)
    def save_scene(request: SceneSaveRequest):
        if scene_store is None:
            raise HTTPException(503, "scene persistence is not configured")
        for placement in request.placements:
            if not index.has_item(placement.furniture_id):
                raise HTTPException(
                    404, f"unknown furniture id {placement.furniture_id!r}")
        return scene_store.save(
            request.name,
            [p.model_dump() for p in request.placements])

    @app.get("/v1/scenes/{scene_id}")
    def get_scene(scene_id: str):
        if scene_store is None:
            raise HTTPException(503, "scene persistence is not configured")
        scene = scene_store.get(scene_id)
        if scene is None:
            raise HTTPException(404, f"unknown scene id {scene_id!r}")
        return scene

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

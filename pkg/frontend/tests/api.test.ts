/** API client: request shapes on the wire and error mapping. */

import { describe, expect, it } from "vitest";

import { ApiError, describeError, StyleRankClient } from "../src/api.js";
import { FakeService } from "./fake_service.js";

function setup() {
  const backend = new FakeService();
  return { backend, client: new StyleRankClient("", backend.fetch) };
}

describe("requests on the wire", () => {
  it("suggestSingle encodes seed, class, k, and generation as query params", async () => {
    const { backend, client } = setup();
    await client.suggestSingle("sofa-a", "lamp", { k: 2, generation: 7 });
    expect(backend.log[0]).toEqual({
      method: "GET",
      path: "/v1/suggest/single?seed=sofa-a&class=lamp&k=2&generation=7",
      body: undefined,
    });
  });

  it("suggestMulti posts the scene ids and class in the body", async () => {
    const { backend, client } = setup();
    await client.suggestMulti(["sofa-a", "lamp-a"], "table", { k: 5 });
    expect(backend.log[0]!.body).toEqual({
      scene: ["sofa-a", "lamp-a"],
      class: "table",
      k: 5,
    });
  });

  it("listFurniture omits absent filters entirely", async () => {
    const { backend, client } = setup();
    await client.listFurniture();
    expect(backend.log[0]!.path).toBe("/v1/furniture");
  });

  it("loadScene escapes the scene id", async () => {
    const { backend, client } = setup();
    await client.loadScene("scene/../etc").catch(() => undefined);
    expect(backend.log[0]!.path).toBe("/v1/scenes/scene%2F..%2Fetc");
  });
});

describe("responses", () => {
  it("suggestion items carry catalog metadata plus the distance", async () => {
    const { client } = setup();
    const response = await client.suggestSingle("sofa-a", "lamp", { k: 1 });
    expect(response.generation).toBe(7);
    expect(response.items[0]).toEqual({
      furniture_id: "lamp-a",
      class: "lamp",
      thumbnail: "/thumbs/lamp-a.png",
      rankable: true,
      distance: 0.2,
    });
  });

  it("scene save and load round-trip the placement list verbatim", async () => {
    const { client } = setup();
    const placements = [
      { furniture_id: "sofa-a", x: 1.5, y: 2.25, rotation: 90, anchored_to: null },
      { furniture_id: "lamp-a", x: 3, y: 4, rotation: 0, anchored_to: "sofa-a" },
    ];
    const saved = await client.saveScene("den", placements);
    expect(saved.id).toBe("scene-0001");
    const loaded = await client.loadScene(saved.id);
    expect(loaded.placements).toEqual(placements);
  });
});

describe("error mapping", () => {
  it("unknown ids become ApiError 404 with the service detail", async () => {
    const { client } = setup();
    const err = await client.suggestSingle("ghost", "lamp").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).message).toContain("unknown furniture id");
  });

  it("generation mismatches become ApiError 409 with the structured detail", async () => {
    const { client } = setup();
    const err = await client.suggestSingle("sofa-a", "lamp", { generation: 99 }).catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).detail).toEqual({
      error: "generation_mismatch",
      requested: 99,
      index_generation: 7,
    });
  });

  it("disabled persistence becomes ApiError 503", async () => {
    const { backend, client } = setup();
    backend.scenesDisabled = true;
    const err = await client.saveScene("den", []).catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(503);
  });

  it("a dead network becomes ApiError status 0", async () => {
    const { backend, client } = setup();
    backend.offline = true;
    const err = await client.indexInfo().catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(0);
    expect(describeError(err)).toContain("unreachable");
  });

  it("describeError keeps plain errors readable", () => {
    expect(describeError(new Error("boom"))).toBe("boom");
    expect(describeError("just text")).toBe("just text");
    expect(describeError(new ApiError(409, { error: "generation_mismatch" })))
      .toContain("reload");
  });
});

/** Typed client for the suggestion service's /v1 HTTP API.
 *
 * This module is the studio's only connection to the backend; nothing
 * else in the frontend touches the network or the file system. The
 * fetch implementation is injectable so tests can run against an
 * in-memory fake.
 */

export interface CatalogItem {
  furniture_id: string;
  class: string;
  thumbnail: string | null;
  rankable: boolean;
}

export interface SuggestionItem extends CatalogItem {
  distance: number;
}

export interface IndexInfo {
  generation: number;
  rankable_items: number;
  unrankable_items: number;
  classes: string[];
  embedding_dim: number;
  page_size: number;
  default_k: number;
}

export interface FurniturePage {
  generation: number;
  page: number;
  page_size: number;
  total: number;
  pages: number;
  items: CatalogItem[];
}

export interface SuggestionResponse {
  generation: number;
  items: SuggestionItem[];
}

export interface EnergyResponse {
  generation: number;
  energy: number;
  placements: number;
}

/** Wire shape of one placement inside a saved scene. */
export interface Placement {
  furniture_id: string;
  x: number;
  y: number;
  rotation: number;
  anchored_to: string | null;
}

export interface SavedScene {
  id: string;
  name: string;
  placements: Placement[];
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx responses and transport failures; status 0 means the
 * service was unreachable. */
export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: unknown) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.name = "ApiError";
  }
}

const JSON_HEADERS = { "content-type": "application/json" };

export class StyleRankClient {
  private readonly fetchImpl: FetchLike;

  constructor(private readonly base = "", fetchImpl?: FetchLike) {
    // bind lazily so a bare global fetch keeps its expected receiver
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, err instanceof Error ? err.message : String(err));
    }
    if (!response.ok) {
      let detail: unknown = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) detail = body.detail;
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  indexInfo(): Promise<IndexInfo> {
    return this.request("/v1/index");
  }

  listFurniture(opts: { class?: string; page?: number; generation?: number } = {}): Promise<FurniturePage> {
    const params = new URLSearchParams();
    if (opts.class !== undefined) params.set("class", opts.class);
    if (opts.page !== undefined) params.set("page", String(opts.page));
    if (opts.generation !== undefined) params.set("generation", String(opts.generation));
    const query = params.toString();
    return this.request(`/v1/furniture${query ? "?" + query : ""}`);
  }

  suggestSingle(
    seed: string,
    className: string,
    opts: { k?: number; generation?: number } = {},
  ): Promise<SuggestionResponse> {
    const params = new URLSearchParams({ seed, class: className });
    if (opts.k !== undefined) params.set("k", String(opts.k));
    if (opts.generation !== undefined) params.set("generation", String(opts.generation));
    return this.request(`/v1/suggest/single?${params}`);
  }

  suggestMulti(
    scene: string[],
    className: string,
    opts: { k?: number; generation?: number } = {},
  ): Promise<SuggestionResponse> {
    return this.request("/v1/suggest/multi", {
      method: "POST",
      headers: JSON_HEADERS,
      body: JSON.stringify({
        scene,
        class: className,
        ...(opts.k !== undefined ? { k: opts.k } : {}),
        ...(opts.generation !== undefined ? { generation: opts.generation } : {}),
      }),
    });
  }

  sceneEnergy(scene: string[], generation?: number): Promise<EnergyResponse> {
    return this.request("/v1/scene/energy", {
      method: "POST",
      headers: JSON_HEADERS,
      body: JSON.stringify({
        scene,
        ...(generation !== undefined ? { generation } : {}),
      }),
    });
  }

  saveScene(name: string, placements: Placement[]): Promise<SavedScene> {
    return this.request("/v1/scenes", {
      method: "POST",
      headers: JSON_HEADERS,
      body: JSON.stringify({ name, placements }),
    });
  }

  loadScene(sceneId: string): Promise<SavedScene> {
    return this.request(`/v1/scenes/${encodeURIComponent(sceneId)}`);
  }
}

/** Turn a thrown value into one banner-sized line for the user. */
export function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.status === 0) return `service unreachable: ${err.message}`;
    if (err.status === 409) return "the catalog index changed underneath this session; reload to continue";
    if (err.status === 422) return `cannot rank this: ${err.message}`;
    if (err.status === 503) return "scene saving is not enabled on this server";
    return err.message;
  }
  return err instanceof Error ? err.message : String(err);
}

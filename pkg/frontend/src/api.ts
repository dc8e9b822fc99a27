import type { GazeSampleWire, OverlayLayer, SegmentResponse, SessionMeta } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface OverlayResult {
  status: number; // 200 fresh, 304 unchanged, 409 not ready
  etag?: string;
  blob?: Blob;
}

type FetchLike = typeof fetch;

/** Thin typed client over the session REST API. All pipeline math lives in the
 * service; this client only moves bytes. */
export class ServiceClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = fetch.bind(globalThis),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async json<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = ((await resp.json()) as { detail?: string }).detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async createSession(volume: Blob | ArrayBuffer, params: Record<string, string> = {}): Promise<SessionMeta> {
    const qs = new URLSearchParams(params).toString();
    const resp = await this.fetchFn(`${this.baseUrl}/sessions${qs ? "?" + qs : ""}`, {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: volume,
    });
    return this.json<SessionMeta>(resp);
  }

  async getSession(id: string): Promise<SessionMeta> {
    return this.json<SessionMeta>(await this.fetchFn(`${this.baseUrl}/sessions/${id}`));
  }

  async postGaze(id: string, samples: GazeSampleWire[]): Promise<{ accepted: number; clamped: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${id}/gaze`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ samples }),
    });
    return this.json(resp);
  }

  /** Conditional overlay fetch; pass the last ETag to let the service answer 304. */
  async getOverlay(id: string, slice: number, layer: OverlayLayer, etag?: string): Promise<OverlayResult> {
    const headers: Record<string, string> = {};
    if (etag) headers["if-none-match"] = etag;
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${id}/overlay/${slice}/${layer}`, { headers });
    if (resp.status === 304) return { status: 304, etag };
    if (resp.status === 200) {
      return { status: 200, etag: resp.headers.get("etag") ?? undefined, blob: await resp.blob() };
    }
    return { status: resp.status };
  }

  /** Raw little-endian int16 plane for client-side window/level. */
  async getSliceRaw(id: string, slice: number): Promise<{ data: Int16Array; width: number; height: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${id}/slice/${slice}`, {
      headers: { accept: "application/octet-stream" },
    });
    if (!resp.ok) throw new ApiError(resp.status, `slice fetch failed: ${resp.status}`);
    const width = Number(resp.headers.get("x-width"));
    const height = Number(resp.headers.get("x-height"));
    const buf = await resp.arrayBuffer();
    return { data: new Int16Array(buf), width, height };
  }

  async segment(id: string, strategy: string, slices?: number[]): Promise<SegmentResponse> {
    const body: Record<string, unknown> = { strategy };
    if (slices) body.slices = slices;
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${id}/segment`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return this.json<SegmentResponse>(resp);
  }

  maskletUrl(id: string): string {
    return `${this.baseUrl}/sessions/${id}/masklet`;
  }
}

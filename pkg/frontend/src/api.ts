/** Typed client for the edit service; the base URL is the only setting. */

export interface VolumeInfo {
  id: string;
  slices: number;
  spacing: [number, number, number];
  modality: string;
}

export interface HealthResponse {
  status: string;
  model_versions: Record<string, unknown>;
}

export interface RefineRequest {
  volume_id: string;
  slice_index: number;
  sketch: string; // base64 8-bit PNG, 0 background / 255 stroke
}

export interface RefineResponse {
  soft: string;
  binary: string;
  model_versions: Record<string, unknown>;
}

export interface EditRequest extends RefineRequest {
  spacing?: [number, number, number];
  seed?: number;
  sampler_steps?: number;
  /** base64 16-bit PNG replacing the stored slice, for chained progression edits */
  base_image?: string;
}

export interface EditResponse {
  edited: string;
  interior_mask: string;
  reference_map: string;
  difference_map: string;
  difference_scale: number;
  metrics: { nrmse: number; ssim: number; psnr: number };
  seed: number;
  model_versions: Record<string, unknown>;
}

/** The sketch does not enclose a region; recoverable by drawing more. */
export class OpenContourError extends Error {
  constructor(message = "sketch contour is not closed") {
    super(message);
    this.name = "OpenContourError";
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class SkeditClient {
  constructor(readonly baseUrl: string = "http://127.0.0.1:8787") {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async health(): Promise<HealthResponse> {
    return this.json(await fetch(this.url("/api/health")));
  }

  async volumes(): Promise<VolumeInfo[]> {
    return this.json(await fetch(this.url("/api/volumes")));
  }

  sliceUrl(volumeId: string, index: number): string {
    return this.url(`/api/volumes/${encodeURIComponent(volumeId)}/slices/${index}`);
  }

  async refine(request: RefineRequest): Promise<RefineResponse> {
    return this.json(await this.post("/api/refine", request));
  }

  async edit(request: EditRequest): Promise<EditResponse> {
    const response = await this.post("/api/edit", request);
    if (response.status === 422) {
      const body = await response.json().catch(() => null);
      const detail = body?.detail ?? body;
      if (detail?.error === "OpenContour") {
        throw new OpenContourError(detail.message);
      }
    }
    return this.json(response);
  }

  private async post(path: string, body: unknown): Promise<Response> {
    return fetch(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  private async json<T>(response: Response): Promise<T> {
    if (!response.ok) {
      const text = await response.text().catch(() => "");
      throw new ApiError(response.status, `${response.status}: ${text}`);
    }
    return response.json() as Promise<T>;
  }
}

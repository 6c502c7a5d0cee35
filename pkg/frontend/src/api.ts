/** Thin API client. Identical views hit an in-memory cache, so
 * rotating back to a dimension already seen issues no request.
 */

import { cubeQuery, ViewState } from "./state.js";
import { CubeResponse, ExperimentsResponse } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

async function errorDetail(response: {
  json(): Promise<unknown>;
  status: number;
}): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    /* non-JSON error body */
  }
  return `request failed with status ${response.status}`;
}

export class ApiClient {
  private cubeCache = new Map<string, CubeResponse>();

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url) => fetch(url),
  ) {}

  async experiments(): Promise<ExperimentsResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/experiments`);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as ExperimentsResponse;
  }

  async cube(view: ViewState): Promise<CubeResponse> {
    const query = cubeQuery(view);
    const cached = this.cubeCache.get(query);
    if (cached) return cached;
    const response = await this.fetchFn(`${this.baseUrl}/cube?${query}`);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    const payload = (await response.json()) as CubeResponse;
    this.cubeCache.set(query, payload);
    return payload;
  }

  clearCache(): void {
    this.cubeCache.clear();
  }
}

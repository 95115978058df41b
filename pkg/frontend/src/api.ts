/** Typed fetch client for the authentication service's HTTP API. */

import type { ClickBox } from "./grid.js";

export interface CreatedUser {
  user_id: string;
}

export interface UploadedImage {
  image_id: string;
  registration_complete?: boolean;
}

export interface SessionStart {
  session_id: string;
  level: number;
  images: string[];
}

export interface ClickResult {
  level?: number;
  images?: string[];
  finalize_ready?: boolean;
}

export interface SessionView {
  session_id: string;
  state: string;
  finalize_ready: boolean;
  level?: number;
  images?: string[];
}

export interface FinalizeResult {
  result: "success" | "failure";
}

export interface ServerConfig {
  otp_transport: string;
  dev_otp_banner: boolean;
}

/** Non-2xx response, carrying the server's detail string. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: unknown };
        if (typeof parsed.detail === "string") {
          detail = parsed.detail;
        }
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createUser(username: string, mobile: string): Promise<CreatedUser> {
    return this.request("POST", "/api/users", { username, mobile });
  }

  uploadImage(
    userId: string,
    level: number,
    status: string,
    contentType: string,
    imageBase64: string,
  ): Promise<UploadedImage> {
    return this.request("POST", `/api/users/${userId}/images`, {
      level,
      status,
      content_type: contentType,
      image_base64: imageBase64,
    });
  }

  startSession(username: string): Promise<SessionStart> {
    return this.request("POST", "/api/sessions", { username });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/api/sessions/${sessionId}`);
  }

  imageUrl(sessionId: string, imageId: string): string {
    return `${this.baseUrl}/api/sessions/${sessionId}/images/${imageId}`;
  }

  submitClick(sessionId: string, click: { image_id: string } & ClickBox): Promise<ClickResult> {
    return this.request("POST", `/api/sessions/${sessionId}/clicks`, click);
  }

  finalize(sessionId: string): Promise<FinalizeResult> {
    return this.request("POST", `/api/sessions/${sessionId}/finalize`);
  }

  getConfig(): Promise<ServerConfig> {
    return this.request("GET", "/api/config");
  }
}

// Typed client for the authorization server's owner-facing HTTP API.
// Every mutation round-trips through the server; the views re-read server
// state afterwards, so nothing here caches anything of record.

export interface ResourceEntry {
  ctx_id: string;
  ctx_type: string;
  cap_origin: string;
  scopes: string[];
}

export interface ShareEntry {
  requesting_party: string;
  scopes: string[];
}

export interface ConsentPrompt {
  prompt_id: string;
  cap: string;
  status: "pending" | "approved" | "rejected";
}

export class SessionExpired extends Error {
  constructor() {
    super("session expired");
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
  ) {
    super(`request failed with ${status}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AuthzApi {
  private session: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  get loggedIn(): boolean {
    return this.session !== null;
  }

  async login(user: string, secret: string): Promise<void> {
    const response = await this.fetchImpl(`${this.baseUrl}/login`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user, secret }),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await response.json());
    }
    const body = (await response.json()) as { session: string };
    this.session = body.session;
  }

  logout(): void {
    this.session = null;
  }

  private async request(path: string, init: RequestInit = {}): Promise<unknown> {
    if (this.session === null) {
      throw new SessionExpired();
    }
    const headers = {
      ...(init.headers ?? {}),
      Authorization: `Bearer ${this.session}`,
      "Content-Type": "application/json",
    };
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      ...init,
      headers,
    });
    if (response.status === 401) {
      this.session = null;
      throw new SessionExpired();
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.json());
    }
    return response.json();
  }

  async resources(): Promise<ResourceEntry[]> {
    const body = (await this.request("/resources")) as {
      resources: ResourceEntry[];
    };
    return body.resources;
  }

  async shares(ctxId: string): Promise<ShareEntry[]> {
    const body = (await this.request(
      `/shares?ctx_id=${encodeURIComponent(ctxId)}`,
    )) as { shares: ShareEntry[] };
    return body.shares;
  }

  async setPolicy(
    requestingParty: string,
    ctxType: string,
    scopes: string[],
  ): Promise<void> {
    await this.request("/policy", {
      method: "POST",
      body: JSON.stringify({
        requesting_party: requestingParty,
        ctx_type: ctxType,
        scopes,
      }),
    });
  }

  async removePolicy(requestingParty: string, ctxType: string): Promise<void> {
    await this.request("/policy", {
      method: "DELETE",
      body: JSON.stringify({
        requesting_party: requestingParty,
        ctx_type: ctxType,
        scopes: [],
      }),
    });
  }

  async consentPrompts(): Promise<ConsentPrompt[]> {
    const body = (await this.request("/consent")) as {
      prompts: ConsentPrompt[];
    };
    return body.prompts;
  }

  async respondConsent(promptId: string, approve: boolean): Promise<string> {
    const body = (await this.request(`/consent/${promptId}`, {
      method: "POST",
      body: JSON.stringify({ approve }),
    })) as { status: string };
    return body.status;
  }
}

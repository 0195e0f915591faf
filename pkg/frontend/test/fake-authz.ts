// In-memory stand-in for the authorization server's owner API, faithful to
// the real endpoint shapes and semantics (sessions, deny-by-default policy,
// single-shot consent prompts). Tests drive the client against this and
// compare view state to the fake's state of record.

import type { ConsentPrompt, ResourceEntry, ShareEntry } from "../src/api.js";

interface PolicyKey {
  requestingParty: string;
  ctxType: string;
}

export class FakeAuthz {
  sessions = new Map<string, string>();
  accounts = new Map<string, string>([["alice@example.com", "alice-login"]]);
  resources: ResourceEntry[] = [];
  policy = new Map<string, string[]>(); // "party|type" -> scopes
  prompts = new Map<string, ConsentPrompt>();
  consented = new Set<string>(); // "cap|owner"
  calls: Record<string, number> = {};
  consentTransitions = 0;
  private sessionCounter = 0;

  addResource(entry: ResourceEntry): void {
    this.resources.push(entry);
  }

  addPrompt(promptId: string, cap: string): void {
    this.prompts.set(promptId, { prompt_id: promptId, cap, status: "pending" });
  }

  policyFor(requestingParty: string, ctxType: string): string[] | undefined {
    return this.policy.get(`${requestingParty}|${ctxType}`);
  }

  /** The provider-side retry a context provider would make. */
  issuePat(cap: string, owner: string): boolean {
    return this.consented.has(`${cap}|${owner}`);
  }

  sharesFor(ctxId: string): ShareEntry[] {
    const resource = this.resources.find((r) => r.ctx_id === ctxId);
    if (!resource) return [];
    const rows: ShareEntry[] = [];
    for (const [key, scopes] of this.policy) {
      const [party, type] = key.split("|");
      if (type === resource.ctx_type && party !== undefined) {
        rows.push({ requesting_party: party, scopes: [...scopes] });
      }
    }
    return rows;
  }

  private count(route: string): void {
    this.calls[route] = (this.calls[route] ?? 0) + 1;
  }

  private json(body: unknown, status = 200): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }

  private authorized(init?: RequestInit): boolean {
    const headers = (init?.headers ?? {}) as Record<string, string>;
    const auth = headers["Authorization"] ?? "";
    const token = auth.replace(/^Bearer /, "");
    return this.sessions.has(token);
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input, "http://fake");
    const method = init?.method ?? "GET";
    const route = `${method} ${url.pathname}`;
    this.count(route);

    if (route === "POST /login") {
      const body = JSON.parse(String(init?.body));
      if (this.accounts.get(body.user) !== body.secret) {
        return this.json({ error: "bad credential" }, 401);
      }
      const session = `session-${++this.sessionCounter}`;
      this.sessions.set(session, body.user);
      return this.json({ session, user: body.user });
    }

    if (!this.authorized(init)) {
      return this.json({ error: "login required" }, 401);
    }

    if (route === "GET /resources") {
      return this.json({ resources: this.resources.map((r) => ({ ...r })) });
    }
    if (route === "GET /shares") {
      return this.json({ shares: this.sharesFor(url.searchParams.get("ctx_id") ?? "") });
    }
    if (route === "POST /policy") {
      const body = JSON.parse(String(init?.body));
      const known = this.resources.some((r) => r.ctx_type === body.ctx_type);
      if (!known) {
        return this.json({ error: "UnknownContextType" }, 400);
      }
      this.policy.set(
        `${body.requesting_party}|${body.ctx_type}`,
        [...body.scopes],
      );
      return this.json({ rules: [] });
    }
    if (route === "DELETE /policy") {
      const body = JSON.parse(String(init?.body));
      this.policy.delete(`${body.requesting_party}|${body.ctx_type}`);
      return this.json({ rules: [] });
    }
    if (route === "GET /consent") {
      return this.json({ prompts: [...this.prompts.values()].map((p) => ({ ...p })) });
    }
    if (method === "POST" && url.pathname.startsWith("/consent/")) {
      const promptId = url.pathname.split("/").pop() ?? "";
      const prompt = this.prompts.get(promptId);
      if (!prompt) {
        return this.json({ error: "unknown prompt" }, 404);
      }
      if (prompt.status === "pending") {
        const body = JSON.parse(String(init?.body));
        prompt.status = body.approve ? "approved" : "rejected";
        this.consentTransitions += 1;
        if (body.approve) {
          this.consented.add(`${prompt.cap}|alice@example.com`);
        }
      }
      return this.json({ prompt_id: promptId, status: prompt.status });
    }
    return this.json({ error: `no route ${route}` }, 404);
  };
}

export function worldWithDeviceLocation(): {
  fake: FakeAuthz;
  ctxId: string;
  ctxType: string;
} {
  const fake = new FakeAuthz();
  const ctxType = "https://cap1.example/ctxtype/device-location";
  fake.addResource({
    ctx_id: "ctx-0001",
    ctx_type: ctxType,
    cap_origin: "https://cap1.example",
    scopes: ["ip", "used:ip", "wifi-ap"],
  });
  return { fake, ctxId: "ctx-0001", ctxType };
}

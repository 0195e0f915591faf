import { describe, expect, it } from "vitest";

import { ApiError, AuthzApi, SessionExpired } from "../src/api.js";
import { FakeAuthz, worldWithDeviceLocation } from "./fake-authz.js";

describe("AuthzApi", () => {
  it("logs in and carries the session on later calls", async () => {
    const { fake } = worldWithDeviceLocation();
    const api = new AuthzApi("", fake.fetch);
    await api.login("alice@example.com", "alice-login");
    expect(api.loggedIn).toBe(true);
    const resources = await api.resources();
    expect(resources).toHaveLength(1);
  });

  it("rejects a bad login", async () => {
    const fake = new FakeAuthz();
    const api = new AuthzApi("", fake.fetch);
    await expect(api.login("alice@example.com", "nope")).rejects.toThrow(ApiError);
    expect(api.loggedIn).toBe(false);
  });

  it("raises SessionExpired before login and after a 401", async () => {
    const { fake } = worldWithDeviceLocation();
    const api = new AuthzApi("", fake.fetch);
    await expect(api.resources()).rejects.toThrow(SessionExpired);

    await api.login("alice@example.com", "alice-login");
    fake.sessions.clear(); // server side forgets the session
    await expect(api.resources()).rejects.toThrow(SessionExpired);
    expect(api.loggedIn).toBe(false);
  });

  it("issues exactly one policy call per setPolicy", async () => {
    const { fake, ctxType } = worldWithDeviceLocation();
    const api = new AuthzApi("", fake.fetch);
    await api.login("alice@example.com", "alice-login");
    await api.setPolicy("https://rp3.example", ctxType, ["used:ip"]);
    expect(fake.calls["POST /policy"]).toBe(1);
    expect(fake.policyFor("https://rp3.example", ctxType)).toEqual(["used:ip"]);
  });

  it("parses shares and consent prompts", async () => {
    const { fake, ctxId, ctxType } = worldWithDeviceLocation();
    fake.policy.set(`https://rp1.example|${ctxType}`, ["ip", "wifi-ap"]);
    fake.addPrompt("prompt-1", "https://cap1.example");
    const api = new AuthzApi("", fake.fetch);
    await api.login("alice@example.com", "alice-login");
    expect(await api.shares(ctxId)).toEqual([
      { requesting_party: "https://rp1.example", scopes: ["ip", "wifi-ap"] },
    ]);
    const prompts = await api.consentPrompts();
    expect(prompts[0]?.status).toBe("pending");
  });

  it("posts the approve flag on consent responses", async () => {
    const { fake } = worldWithDeviceLocation();
    fake.addPrompt("prompt-1", "https://cap1.example");
    const api = new AuthzApi("", fake.fetch);
    await api.login("alice@example.com", "alice-login");
    expect(await api.respondConsent("prompt-1", false)).toBe("rejected");
    expect(fake.prompts.get("prompt-1")?.status).toBe("rejected");
  });
});

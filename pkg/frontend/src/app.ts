// DOM wiring for the owner console. All state of record lives on the
// server; this file only renders OwnerConsole's views and forwards form
// events to it.

import { AuthzApi } from "./api.js";
import { OwnerConsole, canSubmitShare } from "./state.js";

const api = new AuthzApi("");
const console_ = new OwnerConsole(api);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function shortUri(uri: string): string {
  return uri.replace(/^https?:\/\//, "");
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.replaceChildren();

  if (console_.needsLogin) {
    root.append(renderLogin());
    return;
  }
  if (console_.lastError) {
    root.append(el("div", { class: "error" }, console_.lastError));
  }
  root.append(renderConsentPrompts(), renderResources());
}

function renderLogin(): HTMLElement {
  const user = el("input", { placeholder: "user email", id: "login-user" });
  const secret = el("input", {
    placeholder: "password",
    type: "password",
    id: "login-secret",
  });
  const error = el("div", { class: "error", style: "display:none" });
  const button = el("button", {}, "Sign in");
  button.addEventListener("click", async () => {
    try {
      await console_.login(user.value, secret.value);
      render();
    } catch {
      error.textContent = "login failed";
      error.style.display = "block";
    }
  });
  return el(
    "div",
    { class: "card" },
    el("h1", {}, "Authorization server"),
    user,
    secret,
    button,
    error,
  );
}

function renderConsentPrompts(): HTMLElement {
  const pending = console_.prompts.filter((p) => p.status === "pending");
  const card = el("div", { class: "card" }, el("h2", {}, "Consent requests"));
  if (pending.length === 0) {
    card.append(el("p", { class: "muted" }, "Nothing waiting for your approval."));
    return card;
  }
  for (const prompt of pending) {
    const row = el(
      "div",
      { class: "consent-row" },
      el("span", {}, `${shortUri(prompt.cap)} asks to manage your contexts`),
    );
    const approve = el("button", {}, "Approve");
    approve.addEventListener("click", async () => {
      await console_.respondConsent(prompt.prompt_id, true);
      render();
    });
    const reject = el("button", { class: "secondary" }, "Reject");
    reject.addEventListener("click", async () => {
      await console_.respondConsent(prompt.prompt_id, false);
      render();
    });
    row.append(approve, reject);
    card.append(row);
  }
  return card;
}

function renderResources(): HTMLElement {
  const card = el("div", { class: "card" }, el("h2", {}, "Managed contexts"));
  if (console_.resourceView.empty) {
    card.append(el("p", { class: "muted" }, "No contexts registered yet."));
    return card;
  }
  const table = el(
    "table",
    {},
    el(
      "tr",
      {},
      el("th", {}, "Context type"),
      el("th", {}, "Provider"),
      el("th", {}, "Scopes"),
    ),
  );
  for (const resource of console_.resourceView.resources) {
    table.append(
      el(
        "tr",
        {},
        el("td", {}, resource.ctx_type.split("/").pop() ?? resource.ctx_type),
        el("td", {}, shortUri(resource.cap_origin)),
        el("td", {}, resource.scopes.join(", ")),
      ),
    );
    card.append(table, renderShares(resource.ctx_id));
  }
  return card;
}

function renderShares(ctxId: string): HTMLElement {
  const view = console_.shareViews.get(ctxId);
  const section = el("div", { class: "shares" }, el("h3", {}, "Shared with"));
  if (!view) return section;

  const table = el("table", {});
  for (const row of view.rows) {
    const revoke = el("button", { class: "secondary" }, "Revoke");
    revoke.addEventListener("click", async () => {
      await console_.revokeShare(ctxId, row.requesting_party);
      render();
    });
    table.append(
      el(
        "tr",
        {},
        el("td", {}, shortUri(row.requesting_party)),
        el("td", {}, row.scopes.join(", ")),
        el("td", {}, revoke),
      ),
    );
  }
  section.append(table);

  // "Share with Others" form: checkbox per offered scope
  const party = el("input", { placeholder: "https://rp3.example" });
  const boxes = view.availableScopes.map((scope) => {
    const box = el("input", { type: "checkbox", value: scope });
    return { scope, box };
  });
  const submit = el("button", {}, "Share") as HTMLButtonElement;
  const formState = () => ({
    requestingParty: party.value,
    selectedScopes: boxes.filter(({ box }) => box.checked).map(({ scope }) => scope),
  });
  const sync = () => {
    submit.disabled = !canSubmitShare(formState());
  };
  sync();
  party.addEventListener("input", sync);
  const form = el("div", { class: "share-form" }, el("h4", {}, "Share with Others"), party);
  for (const { scope, box } of boxes) {
    box.addEventListener("change", sync);
    form.append(el("label", {}, box, ` ${scope}`));
  }
  submit.addEventListener("click", async () => {
    await console_.submitShare(ctxId, formState());
    render();
  });
  form.append(submit);
  section.append(form);
  return section;
}

render();

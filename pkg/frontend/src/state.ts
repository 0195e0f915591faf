// View-model for the owner console. Holds no state of record: every view
// is rebuilt from a fresh server read, and every mutation is exactly one
// API call followed by a refresh.

import {
  AuthzApi,
  ConsentPrompt,
  ResourceEntry,
  SessionExpired,
  ShareEntry,
} from "./api.js";

export interface ResourceView {
  resources: ResourceEntry[];
  empty: boolean;
}

export interface ShareView {
  ctxId: string;
  ctxType: string;
  availableScopes: string[];
  rows: ShareEntry[];
}

export interface ShareForm {
  requestingParty: string;
  selectedScopes: string[];
}

export function canSubmitShare(form: ShareForm): boolean {
  return form.requestingParty.trim() !== "" && form.selectedScopes.length > 0;
}

export class OwnerConsole {
  resourceView: ResourceView = { resources: [], empty: true };
  shareViews: Map<string, ShareView> = new Map();
  prompts: ConsentPrompt[] = [];
  needsLogin = true;
  lastError: string | null = null;

  constructor(private readonly api: AuthzApi) {}

  async login(user: string, secret: string): Promise<void> {
    await this.api.login(user, secret);
    this.needsLogin = false;
    await this.refresh();
  }

  private async guard<T>(work: () => Promise<T>): Promise<T | undefined> {
    try {
      this.lastError = null;
      return await work();
    } catch (error) {
      if (error instanceof SessionExpired) {
        this.needsLogin = true;
        return undefined;
      }
      this.lastError = error instanceof Error ? error.message : String(error);
      throw error;
    }
  }

  async refresh(): Promise<void> {
    await this.guard(async () => {
      const resources = await this.api.resources();
      this.resourceView = { resources, empty: resources.length === 0 };
      const views = new Map<string, ShareView>();
      for (const resource of resources) {
        views.set(resource.ctx_id, {
          ctxId: resource.ctx_id,
          ctxType: resource.ctx_type,
          availableScopes: resource.scopes,
          rows: await this.api.shares(resource.ctx_id),
        });
      }
      this.shareViews = views;
      this.prompts = await this.api.consentPrompts();
    });
  }

  /** "Share with Others": exactly one policy call, then re-read. */
  async submitShare(ctxId: string, form: ShareForm): Promise<void> {
    const view = this.shareViews.get(ctxId);
    if (view === undefined) {
      throw new Error(`unknown resource ${ctxId}`);
    }
    if (!canSubmitShare(form)) {
      throw new Error("choose a requesting party and at least one scope");
    }
    const outside = form.selectedScopes.filter(
      (scope) => !view.availableScopes.includes(scope),
    );
    if (outside.length > 0) {
      throw new Error(`scopes not offered by this resource: ${outside.join(", ")}`);
    }
    await this.guard(() =>
      this.api.setPolicy(form.requestingParty, view.ctxType, form.selectedScopes),
    );
    await this.refresh();
  }

  async revokeShare(ctxId: string, requestingParty: string): Promise<void> {
    const view = this.shareViews.get(ctxId);
    if (view === undefined) {
      throw new Error(`unknown resource ${ctxId}`);
    }
    await this.guard(() => this.api.removePolicy(requestingParty, view.ctxType));
    await this.refresh();
  }

  async respondConsent(promptId: string, approve: boolean): Promise<void> {
    await this.guard(() => this.api.respondConsent(promptId, approve));
    await this.refresh();
  }
}

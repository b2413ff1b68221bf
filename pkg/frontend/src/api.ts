// Thin client for the query endpoints the dashboard uses.

import { CallRecordObj, SnapshotCall } from "./types.js";

export class ApiClient {
  constructor(private base: string = "") {}

  async live(): Promise<SnapshotCall[]> {
    const r = await fetch(`${this.base}/live`);
    if (!r.ok) throw new Error(`GET /live -> ${r.status}`);
    return (await r.json()).calls as SnapshotCall[];
  }

  async call(callId: string): Promise<CallRecordObj | null> {
    const r = await fetch(`${this.base}/calls/${encodeURIComponent(callId)}`);
    if (r.status === 404) return null;
    if (!r.ok) throw new Error(`GET /calls/${callId} -> ${r.status}`);
    return (await r.json()) as CallRecordObj;
  }

  async action(
    callId: string,
    action: "flag" | "acknowledge" | "note",
    actor: string,
    note = "",
  ): Promise<{ ok: boolean; status: number; detail?: string }> {
    const r = await fetch(`${this.base}/calls/${encodeURIComponent(callId)}/action`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ action, actor, note }),
    });
    if (r.ok) return { ok: true, status: r.status };
    let detail: string | undefined;
    try {
      detail = (await r.json()).detail;
    } catch {
      detail = undefined;
    }
    return { ok: false, status: r.status, detail };
  }
}

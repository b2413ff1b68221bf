// Risk-ranked board of live calls, derived purely from received stream lines.
// Replaying the same lines through a fresh BoardState reproduces the same
// rows, which is what makes recorded-session tests meaningful.

import { EventLine, SnapshotLine, StreamLine } from "./types.js";

export const DEFAULT_HIGHLIGHT_THRESHOLD = 60;
const RECENT_INTENTS = 5;

export interface BoardRow {
  callId: string;
  risk: number;
  recentIntents: string[]; // newest first, at most 5
  durationMs: number;
  highlight: boolean;
}

interface RowData {
  risk: number;
  recentIntents: string[];
  lastTsMs: number;
}

export class BoardState {
  private calls = new Map<string, RowData>();

  constructor(public highlightThreshold = DEFAULT_HIGHLIGHT_THRESHOLD) {}

  apply(line: StreamLine): void {
    if (line.type === "live_snapshot") {
      const snap = line as SnapshotLine;
      this.calls.clear();
      for (const c of snap.calls) {
        this.calls.set(c.call_id, {
          risk: c.risk,
          recentIntents: [...c.recent_intents],
          lastTsMs: c.last_ts_ms,
        });
      }
      return;
    }
    const e = line as EventLine;
    if (typeof e.call_id !== "string") return;
    if (e.type === "call_started") {
      this.calls.set(e.call_id, { risk: 0, recentIntents: [], lastTsMs: e.ts_ms });
      return;
    }
    const row = this.calls.get(e.call_id);
    if (!row) return; // not a live call we know about
    row.lastTsMs = Math.max(row.lastTsMs, e.ts_ms);
    if (e.type === "call_ended") {
      this.calls.delete(e.call_id);
    } else if (e.type === "risk_score_updated" && typeof e.score === "number") {
      row.risk = e.score;
    } else if (e.type === "intent_matched" && e.intent) {
      row.recentIntents = [e.intent.id, ...row.recentIntents].slice(0, RECENT_INTENTS);
    }
  }

  rows(): BoardRow[] {
    const out: BoardRow[] = [];
    for (const [callId, d] of this.calls) {
      out.push({
        callId,
        risk: d.risk,
        recentIntents: [...d.recentIntents],
        durationMs: d.lastTsMs,
        highlight: d.risk >= this.highlightThreshold,
      });
    }
    out.sort(
      (a, b) => b.risk - a.risk || b.durationMs - a.durationMs || a.callId.localeCompare(b.callId),
    );
    return out;
  }

  liveCount(): number {
    return this.calls.size;
  }
}

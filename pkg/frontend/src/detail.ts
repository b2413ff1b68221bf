// One call's detail view: turn-grouped transcript, event timeline, risk
// history. Applies lines strictly in arrival order and never reorders; seq
// continuity from the subscribe point is tracked so gaps are visible.

import { EventLine, Severity, Speaker, StreamLine } from "./types.js";

export interface TranscriptTurn {
  speaker: Speaker;
  lines: string[];
}

export interface TimelineItem {
  seq: number;
  tsMs: number;
  kind: "intent" | "entity" | "trigger" | "action" | "lifecycle";
  label: string;
  severity?: Severity;
}

export class DetailState {
  callId: string;
  turns: TranscriptTurn[] = [];
  timeline: TimelineItem[] = [];
  riskHistory: { tsMs: number; score: number }[] = [{ tsMs: 0, score: 0 }];
  ended = false;
  seqGap = false;
  private lastSeq: number | null = null;

  constructor(callId: string) {
    this.callId = callId;
  }

  get risk(): number {
    return this.riskHistory[this.riskHistory.length - 1].score;
  }

  apply(line: StreamLine): void {
    if (line.type === "live_snapshot") return;
    const e = line as EventLine;
    if (e.call_id !== this.callId || typeof e.seq !== "number") return;
    if (this.lastSeq !== null && e.seq !== this.lastSeq + 1) {
      this.seqGap = true;
    }
    this.lastSeq = e.seq;
    switch (e.type) {
      case "call_started":
        this.timeline.push({ seq: e.seq, tsMs: e.ts_ms, kind: "lifecycle", label: "call started" });
        break;
      case "utterance_finalized": {
        const u = e.utterance!;
        const last = this.turns[this.turns.length - 1];
        if (last && last.speaker === u.speaker) {
          last.lines.push(u.refined_text);
        } else {
          this.turns.push({ speaker: u.speaker, lines: [u.refined_text] });
        }
        break;
      }
      case "entity_extracted": {
        const ent = e.entity!;
        this.timeline.push({
          seq: e.seq,
          tsMs: e.ts_ms,
          kind: "entity",
          label: `${ent.type}: ${ent.raw_text}`,
        });
        break;
      }
      case "intent_matched": {
        const m = e.intent!;
        this.timeline.push({
          seq: e.seq,
          tsMs: e.ts_ms,
          kind: "intent",
          label: `${m.id} (${m.score.toFixed(2)})`,
        });
        break;
      }
      case "rule_triggered":
        this.timeline.push({
          seq: e.seq,
          tsMs: e.ts_ms,
          kind: "trigger",
          label: `${e.rule_id}: ${e.detail ?? ""}`,
          severity: e.severity,
        });
        break;
      case "risk_score_updated":
        this.riskHistory.push({ tsMs: e.ts_ms, score: e.score ?? 0 });
        break;
      case "supervisor_action": {
        const note = e.note ? ` — ${e.note}` : "";
        this.timeline.push({
          seq: e.seq,
          tsMs: e.ts_ms,
          kind: "action",
          label: `${e.action} by ${e.actor}${note}`,
        });
        break;
      }
      case "call_ended":
        this.ended = true;
        this.timeline.push({ seq: e.seq, tsMs: e.ts_ms, kind: "lifecycle", label: "call ended" });
        break;
      default:
        break; // word_recognized feeds nothing visible; utterances carry text
    }
  }

  // Inline SVG polyline points for the risk sparkline, normalized to a box.
  sparklinePoints(width = 120, height = 28): string {
    const hist = this.riskHistory;
    const maxTs = Math.max(1, hist[hist.length - 1].tsMs);
    return hist
      .map((p) => {
        const x = (p.tsMs / maxTs) * (width - 2) + 1;
        const y = height - 1 - (p.score / 100) * (height - 2);
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
  }
}

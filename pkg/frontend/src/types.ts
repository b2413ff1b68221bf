// Wire types mirroring the engine's canonical JSON lines.

export type Speaker = "agent" | "customer";
export type Severity = "INFO" | "WARN" | "CRITICAL";

export interface WordObj {
  seq: number;
  text: string;
  start_ms: number;
  end_ms: number;
  speaker: Speaker;
  confidence: number;
}

export interface UtteranceObj {
  speaker: Speaker;
  refined_text: string;
  start_ms: number;
  end_ms: number;
  words: WordObj[];
}

export interface EntityObj {
  type: string;
  speaker: Speaker;
  first_seq: number;
  last_seq: number;
  raw_text: string;
  value: Record<string, unknown> & { kind: string };
}

export interface IntentObj {
  id: string;
  speaker: Speaker;
  first_seq: number;
  last_seq: number;
  score: number;
  pattern_index: number;
  bindings: Record<string, EntityObj>;
}

export interface EventLine {
  v: number;
  type: string;
  call_id: string;
  seq: number;
  ts_ms: number;
  metadata?: Record<string, string>;
  word?: WordObj;
  utterance?: UtteranceObj;
  entity?: EntityObj;
  intent?: IntentObj;
  rule_id?: string;
  severity?: Severity;
  detail?: string;
  score?: number;
  action?: string;
  actor?: string;
  note?: string;
}

export interface SnapshotCall {
  call_id: string;
  risk: number;
  recent_intents: string[];
  started_wall_ms: number;
  last_ts_ms: number;
}

export interface SnapshotLine {
  v: number;
  type: "live_snapshot";
  calls: SnapshotCall[];
}

export type StreamLine = EventLine | SnapshotLine | { type: string; [k: string]: unknown };

export interface CallRecordObj {
  call_id: string;
  metadata: Record<string, string>;
  transcript: [string, string][];
  events: EventLine[];
  intent_ids: string[];
  entities: EntityObj[];
  keyphrases: [string, number][];
  summary: string;
  risk: number;
  started_utc_ms: number;
  ended_utc_ms: number;
  duration_ms: number;
}

export function parseLine(raw: string): StreamLine | null {
  const trimmed = raw.trim();
  if (!trimmed) return null;
  try {
    return JSON.parse(trimmed) as StreamLine;
  } catch {
    return null;
  }
}

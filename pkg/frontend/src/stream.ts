// ndjson event stream client: fetch + ReadableStream, line framing,
// automatic resubscribe with backoff. Snapshot-then-stream on the server
// side means reconnects rebuild state from scratch.

import { parseLine, StreamLine } from "./types.js";

export interface StreamOptions {
  callIds?: string[];
  eventTypes?: string[];
  minSeverity?: string;
}

export function streamUrl(base: string, opts: StreamOptions = {}): string {
  const params = new URLSearchParams();
  if (opts.callIds?.length) params.set("call_ids", opts.callIds.join(","));
  if (opts.eventTypes?.length) params.set("event_types", opts.eventTypes.join(","));
  if (opts.minSeverity) params.set("min_severity", opts.minSeverity);
  const q = params.toString();
  return `${base}/stream${q ? "?" + q : ""}`;
}

/** Split a byte stream into complete lines; carry partials across chunks. */
export class LineSplitter {
  private buffer = "";

  push(chunk: string): string[] {
    this.buffer += chunk;
    const parts = this.buffer.split("\n");
    this.buffer = parts.pop() ?? "";
    return parts.filter((p) => p.trim().length > 0);
  }

  flush(): string[] {
    const rest = this.buffer.trim();
    this.buffer = "";
    return rest ? [rest] : [];
  }
}

export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;
  private backoffMs = 500;

  constructor(
    private url: string,
    private onLine: (line: StreamLine) => void,
    private onStatus: (connected: boolean) => void = () => {},
  ) {}

  start(): void {
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const response = await fetch(this.url, { signal: this.controller.signal });
        if (!response.ok || !response.body) throw new Error(`stream ${response.status}`);
        this.onStatus(true);
        this.backoffMs = 500;
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const splitter = new LineSplitter();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const raw of splitter.push(decoder.decode(value, { stream: true }))) {
            const line = parseLine(raw);
            if (line) this.onLine(line);
          }
        }
        for (const raw of splitter.flush()) {
          const line = parseLine(raw);
          if (line) this.onLine(line);
        }
      } catch {
        // fall through to reconnect
      }
      this.onStatus(false);
      if (this.stopped) return;
      await new Promise((r) => setTimeout(r, this.backoffMs));
      this.backoffMs = Math.min(this.backoffMs * 2, 10_000);
    }
  }
}

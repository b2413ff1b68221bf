// Dashboard wiring: one stream drives the board, one per opened call drives
// the detail pane; supervisor actions post back through the public API.

import { ApiClient } from "./api.js";
import { BoardState } from "./board.js";
import { DetailState } from "./detail.js";
import { EventStream, streamUrl } from "./stream.js";
import { CallRecordObj, EventLine } from "./types.js";

const SEVERITY_CLASS: Record<string, string> = {
  INFO: "sev-info",
  WARN: "sev-warn",
  CRITICAL: "sev-critical",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtDuration(ms: number): string {
  const s = Math.floor(ms / 1000);
  return `${Math.floor(s / 60)}:${String(s % 60).padStart(2, "0")}`;
}

export class App {
  private board = new BoardState();
  private api = new ApiClient("");
  private boardStream: EventStream | null = null;
  private detail: DetailState | null = null;
  private detailStream: EventStream | null = null;

  constructor(private root: HTMLElement) {}

  start(): void {
    this.render();
    this.boardStream = new EventStream(
      streamUrl(""),
      (line) => {
        this.board.apply(line);
        this.renderBoard();
      },
      (connected) => this.setStale(!connected),
    );
    this.boardStream.start();
  }

  private setStale(stale: boolean): void {
    const badge = this.root.querySelector("#conn-badge") as HTMLElement | null;
    if (badge) {
      badge.textContent = stale ? "stale — reconnecting" : "live";
      badge.className = stale ? "badge stale" : "badge live";
    }
  }

  private render(): void {
    this.root.innerHTML = "";
    const header = el("header");
    header.append(el("h1", undefined, "Live calls"), el("span", "badge live", "live"));
    header.lastElementChild!.id = "conn-badge";
    const board = el("section", "board");
    board.id = "board";
    const detail = el("section", "detail");
    detail.id = "detail";
    detail.append(el("p", "hint", "Select a call to supervise it."));
    this.root.append(header, board, detail);
    this.renderBoard();
  }

  renderBoard(): void {
    const section = this.root.querySelector("#board");
    if (!section) return;
    const table = el("table");
    const head = el("tr");
    for (const col of ["call", "risk", "recent intents", "duration", ""]) {
      head.append(el("th", undefined, col));
    }
    table.append(head);
    for (const row of this.board.rows()) {
      const tr = el("tr", row.highlight ? "risk-high" : "");
      tr.dataset.callId = row.callId;
      tr.append(el("td", "call-id", row.callId));
      tr.append(el("td", "risk", String(row.risk)));
      tr.append(el("td", "intents", row.recentIntents.join(", ")));
      tr.append(el("td", "duration", fmtDuration(row.durationMs)));
      const open = el("button", undefined, "watch");
      open.addEventListener("click", () => void this.openCall(row.callId));
      const td = el("td");
      td.append(open);
      tr.append(td);
      table.append(tr);
    }
    section.innerHTML = "";
    section.append(table);
    if (this.board.liveCount() === 0) {
      section.append(el("p", "hint", "No live calls."));
    }
  }

  async openCall(callId: string): Promise<void> {
    this.detailStream?.stop();
    this.detail = new DetailState(callId);
    this.detailStream = new EventStream(streamUrl("", { callIds: [callId] }), (line) => {
      this.detail?.apply(line);
      this.renderDetail();
    });
    this.detailStream.start();
    // for an already-ended call, the stream will stay silent: pull history
    const record = await this.api.call(callId);
    if (record && this.detail && this.detail.turns.length === 0 && this.detail.ended === false) {
      this.loadRecord(record);
    }
    this.renderDetail();
  }

  private loadRecord(record: CallRecordObj): void {
    const detail = new DetailState(record.call_id);
    for (const ev of record.events) detail.apply(ev as EventLine);
    this.detail = detail;
  }

  renderDetail(): void {
    const section = this.root.querySelector("#detail");
    const d = this.detail;
    if (!section || !d) return;
    section.innerHTML = "";
    const head = el("div", "detail-head");
    head.append(el("h2", undefined, d.callId));
    head.append(el("span", d.risk >= this.board.highlightThreshold ? "risk risk-high" : "risk",
                   `risk ${d.risk}`));
    const spark = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    spark.setAttribute("viewBox", "0 0 120 28");
    spark.setAttribute("class", "sparkline");
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", d.sparklinePoints());
    spark.append(line);
    head.append(spark);
    if (d.ended) head.append(el("span", "badge", "ended"));
    if (d.seqGap) head.append(el("span", "badge stale", "gap in stream"));
    section.append(head);

    const actions = el("div", "actions");
    for (const action of ["flag", "acknowledge"] as const) {
      const b = el("button", undefined, action);
      b.addEventListener("click", () => void this.sendAction(action));
      actions.append(b);
    }
    const noteBtn = el("button", undefined, "note");
    noteBtn.addEventListener("click", () => {
      const text = prompt("Note text:") ?? "";
      if (text) void this.sendAction("note", text);
    });
    actions.append(noteBtn);
    const status = el("span", "action-status", "");
    status.id = "action-status";
    actions.append(status);
    section.append(actions);

    const cols = el("div", "cols");
    const transcript = el("div", "transcript");
    transcript.append(el("h3", undefined, "Transcript"));
    for (const turn of d.turns) {
      const t = el("div", `turn ${turn.speaker}`);
      t.append(el("span", "speaker", turn.speaker));
      t.append(el("span", "text", turn.lines.join(" ")));
      transcript.append(t);
    }
    const timeline = el("div", "timeline");
    timeline.append(el("h3", undefined, "Events"));
    for (const item of d.timeline) {
      const cls = item.severity ? SEVERITY_CLASS[item.severity] : item.kind;
      const row = el("div", `event ${cls}`);
      row.append(el("span", "ts", fmtDuration(item.tsMs)));
      row.append(el("span", "label", item.label));
      timeline.append(row);
    }
    cols.append(transcript, timeline);
    section.append(cols);
  }

  private async sendAction(action: "flag" | "acknowledge" | "note", note = ""): Promise<void> {
    if (!this.detail) return;
    const result = await this.api.action(this.detail.callId, action, "supervisor", note);
    const status = this.root.querySelector("#action-status") as HTMLElement | null;
    if (status) {
      status.textContent = result.ok ? "" : result.detail ?? `rejected (${result.status})`;
    }
  }
}

declare global {
  interface Window {
    app: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.app = new App(document.getElementById("app")!);
  window.app.start();
}

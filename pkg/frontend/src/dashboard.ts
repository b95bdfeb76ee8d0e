/**
 * Task dashboard: polls /api/tasks (default every 2 s) and renders status
 * counts, per-worker activity, and the recent terminal tasks with durations.
 * Cancel buttons post to the cancel endpoint and refresh immediately; an
 * unreachable API shows a banner with a retry button.
 */

import { ApiClient, LatestGate, TaskSnapshot } from "./api.js";

export class Dashboard {
  readonly element: HTMLElement;
  snapshot: TaskSnapshot | null = null;
  error: string | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private gate = new LatestGate();

  constructor(
    private client: ApiClient,
    public intervalMs: number = 2000,
  ) {
    this.element = document.createElement("section");
    this.element.className = "dashboard";
  }

  start(): void {
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    const token = this.gate.next();
    try {
      const snapshot = await this.client.getTasks();
      if (!this.gate.isCurrent(token)) {
        return; // superseded by a newer poll
      }
      this.snapshot = snapshot;
      this.error = null;
    } catch (error) {
      if (!this.gate.isCurrent(token)) {
        return;
      }
      this.error = String(error instanceof Error ? error.message : error);
    }
    this.render();
  }

  async cancel(taskId: string): Promise<void> {
    try {
      await this.client.cancelTask(taskId);
    } catch (error) {
      this.error = String(error instanceof Error ? error.message : error);
    }
    await this.refresh();
  }

  render(): void {
    this.element.replaceChildren();
    if (this.error !== null) {
      const banner = document.createElement("div");
      banner.className = "error-banner";
      banner.textContent = `API unreachable: ${this.error}`;
      const retry = document.createElement("button");
      retry.className = "retry";
      retry.textContent = "retry";
      retry.addEventListener("click", () => void this.refresh());
      banner.append(retry);
      this.element.append(banner);
    }
    const snapshot = this.snapshot;
    if (!snapshot) {
      return;
    }

    const counts = document.createElement("div");
    counts.className = "status-counts";
    const total = Object.values(snapshot.counts).reduce((a, b) => a + b, 0);
    for (const [status, count] of Object.entries(snapshot.counts)) {
      const chip = document.createElement("span");
      chip.className = `count count-${status}`;
      chip.textContent = `${status}: ${count}`;
      counts.append(chip);
    }
    this.element.append(counts);

    if (total === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = "no tasks";
      this.element.append(empty);
      return;
    }

    const workers = document.createElement("table");
    workers.className = "workers";
    for (const [worker, active] of Object.entries(snapshot.workers)) {
      const row = workers.insertRow();
      row.insertCell().textContent = worker;
      row.insertCell().textContent = `${active.stage} ${active.task_id}`;
      row.insertCell().textContent = active.last_heartbeat ?? "";
      const cancelCell = row.insertCell();
      const cancel = document.createElement("button");
      cancel.className = "cancel";
      cancel.dataset.task = active.task_id;
      cancel.textContent = "cancel";
      cancel.addEventListener("click", () => void this.cancel(active.task_id));
      cancelCell.append(cancel);
    }
    this.element.append(workers);

    const recent = document.createElement("table");
    recent.className = "recent";
    for (const entry of snapshot.recent) {
      const row = recent.insertRow();
      row.dataset.task = entry.task_id;
      row.insertCell().textContent = entry.task_id.slice(0, 8);
      row.insertCell().textContent = entry.stage;
      const status = row.insertCell();
      status.textContent = entry.status;
      status.className = `status-${entry.status}`;
      row.insertCell().textContent =
        entry.duration_seconds === null ? "" : `${entry.duration_seconds.toFixed(2)}s`;
      row.insertCell().textContent = entry.error ?? "";
    }
    this.element.append(recent);
  }
}

import { ApiClient, PluginDescriptor, PredictionView, TaskSnapshot } from "../src/api.js";
import fixture from "./fixtures/plugins.json";

export const PLUGINS = (fixture as { plugins: PluginDescriptor[] }).plugins;

export interface Call {
  method: string;
  args: unknown[];
}

/**
 * In-memory ApiClient double: queued responses are consumed FIFO, and the
 * most recently consumed one stays sticky for further calls.
 */
export class FakeClient extends ApiClient {
  calls: Call[] = [];
  responses = new Map<string, unknown[]>();
  private sticky = new Map<string, unknown>();

  constructor() {
    super("");
  }

  queue(method: string, value: unknown): void {
    const bucket = this.responses.get(method) ?? [];
    bucket.push(value);
    this.responses.set(method, bucket);
  }

  private take<T>(method: string, args: unknown[]): Promise<T> {
    this.calls.push({ method, args });
    const bucket = this.responses.get(method) ?? [];
    let value: unknown;
    if (bucket.length > 0) {
      value = bucket.shift();
      this.sticky.set(method, value);
    } else if (this.sticky.has(method)) {
      value = this.sticky.get(method);
    } else {
      return Promise.reject(new Error(`no queued response for ${method}`));
    }
    if (value instanceof Error) {
      return Promise.reject(value);
    }
    if (typeof value === "function") {
      return (value as () => Promise<T>)();
    }
    return Promise.resolve(value as T);
  }

  override getPlugins(stage?: string) {
    return this.take<{ plugins: PluginDescriptor[] }>("getPlugins", [stage]);
  }

  override launchStage(stage: string, body: Record<string, unknown>) {
    return this.take<{ task_id: string }>("launchStage", [stage, body]);
  }

  override getTasks() {
    return this.take<TaskSnapshot>("getTasks", []);
  }

  override cancelTask(taskId: string) {
    return this.take<{ task_id: string; status: string }>("cancelTask", [taskId]);
  }

  override getPackages(offset: number, limit: number) {
    return this.take<never>("getPackages", [offset, limit]);
  }

  override vote(packageId: string, category: string, voter: string) {
    return this.take<never>("vote", [packageId, category, voter]);
  }

  override getModels() {
    return this.take<never>("getModels", []);
  }

  override getPredictionView(modelId: string, options: unknown) {
    return this.take<PredictionView>("getPredictionView", [modelId, options]);
  }

  callsTo(method: string): Call[] {
    return this.calls.filter((c) => c.method === method);
  }
}

export function makeView(overrides: Partial<PredictionView> = {}): PredictionView {
  return {
    model_id: "m1",
    dims: 2,
    show_incorrect: true,
    points: [
      {
        package_id: "p1",
        coords: [0, 0],
        true_label: "game",
        predicted_label: "game",
        confidence: 0.9,
        partition: "train",
      },
      {
        package_id: "p2",
        coords: [1, 1],
        true_label: "game",
        predicted_label: "tool",
        confidence: 0.4,
        partition: "test",
      },
      {
        package_id: "p3",
        coords: [2, 0.5],
        true_label: "tool",
        predicted_label: "tool",
        confidence: 0.8,
        partition: "test",
      },
    ],
    arrows: [
      { from: "p1", to: [0.5, 0.5], color: "green" },
      { from: "p2", to: [1.5, 0.9], color: "red" },
      { from: "p3", to: [1.5, 0.9], color: "green" },
    ],
    centroids: { game: [0.5, 0.5], tool: [1.5, 0.9] },
    focal: null,
    neighbors: null,
    ...overrides,
  };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

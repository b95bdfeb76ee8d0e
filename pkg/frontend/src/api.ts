/**
 * Typed client for the Caravan gateway. Every non-2xx response carries the
 * uniform error body {status, code, message, details}; it surfaces here as
 * an ApiError so views can attach per-field messages.
 */

export interface ParamDescriptor {
  name: string;
  kind: "int" | "float" | "bool" | "enum" | "string" | "int_list";
  default: unknown;
  description: string;
  range: Array<number | string> | null;
  feature_sensitive_only: boolean;
}

export interface PluginDescriptor {
  plugin_id: string;
  version: string;
  stage: string;
  algorithm_class: string | null;
  title: string;
  description: string;
  feature_sensitive: boolean;
  params: ParamDescriptor[];
}

export interface TaskSnapshot {
  counts: Record<string, number>;
  workers: Record<string, { task_id: string; stage: string; last_heartbeat: string | null }>;
  recent: Array<{
    task_id: string;
    stage: string;
    status: string;
    finished_at: string;
    duration_seconds: number | null;
    error: string | null;
  }>;
}

export interface TaskView {
  task_id: string;
  stage: string;
  status: string;
  attempt: number;
  completed_units: string[];
  units: string[];
  error: string | null;
  result: Record<string, unknown> | null;
}

export interface PackageView {
  package_id: string;
  name: string;
  version: string;
  origin: string;
  metadata: Record<string, unknown>;
  completed_families: string[];
  resolved_label: { category: string; source: string; tie: boolean } | null;
  votes: Array<{ category: string; voter: string; cast_at: string }>;
}

export interface PackagePage {
  items: PackageView[];
  total: number;
  offset: number;
  limit: number;
}

export interface ViewPoint {
  package_id: string;
  coords: number[];
  true_label: string;
  predicted_label: string;
  confidence: number;
  partition: string;
}

export interface ViewArrow {
  from: string;
  to: number[];
  color: "green" | "red";
}

export interface PredictionView {
  model_id: string;
  dims: number;
  show_incorrect: boolean;
  points: ViewPoint[];
  arrows: ViewArrow[];
  centroids: Record<string, number[]>;
  focal: string | null;
  neighbors: Array<{ package_id: string; distance: number }> | null;
}

export interface ModelEntry {
  artifact_id: string;
  name: string | null;
  created_at: string;
  evaluation_id: string | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: Array<[string, string]> = [],
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  try {
    const body = await response.json();
    const details = (body.details ?? []).map((d: unknown) =>
      Array.isArray(d) ? [String(d[0]), String(d[1])] : [String(d), ""],
    );
    return new ApiError(body.status ?? response.status, body.code ?? "error", body.message, details);
  } catch {
    return new ApiError(response.status, "error", response.statusText);
  }
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, init);
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  getPlugins(stage?: string): Promise<{ plugins: PluginDescriptor[] }> {
    const query = stage ? `?stage=${encodeURIComponent(stage)}` : "";
    return this.request(`/api/plugins${query}`);
  }

  launchStage(stage: string, body: Record<string, unknown>): Promise<{ task_id: string }> {
    return this.request(`/api/stages/${stage}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getTasks(): Promise<TaskSnapshot> {
    return this.request("/api/tasks");
  }

  getTask(taskId: string): Promise<TaskView> {
    return this.request(`/api/tasks/${taskId}`);
  }

  cancelTask(taskId: string): Promise<{ task_id: string; status: string }> {
    return this.request(`/api/tasks/${taskId}/cancel`, { method: "POST" });
  }

  getPackages(offset: number, limit: number): Promise<PackagePage> {
    return this.request(`/api/packages?offset=${offset}&limit=${limit}`);
  }

  vote(
    packageId: string,
    category: string,
    voter: string,
  ): Promise<{ resolved_label: { category: string; source: string; tie: boolean } }> {
    return this.request(`/api/packages/${packageId}/votes`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ category, voter }),
    });
  }

  getModels(): Promise<{ models: ModelEntry[] }> {
    return this.request("/api/models");
  }

  getDatasets(): Promise<{ datasets: Array<{ artifact_id: string; kind: string; name: string | null }> }> {
    return this.request("/api/datasets");
  }

  getPredictionView(
    modelId: string,
    options: { dims: 2 | 3; k: number; showIncorrect: boolean; focal?: string | null },
  ): Promise<PredictionView> {
    const params = new URLSearchParams({
      dims: String(options.dims),
      k: String(options.k),
      show_incorrect: String(options.showIncorrect),
    });
    if (options.focal) {
      params.set("focal", options.focal);
    }
    return this.request(`/api/models/${modelId}/prediction-view?${params.toString()}`);
  }
}

/** Monotonic token source: views drop responses older than the latest request. */
export class LatestGate {
  private sequence = 0;

  next(): number {
    return ++this.sequence;
  }

  isCurrent(token: number): boolean {
    return token === this.sequence;
  }
}

/**
 * Prediction explorer: 2-D and rotatable 3-D scatter of the evaluation's
 * projected latent points, arrows from each point to its predicted-class
 * centroid (green when correct, red when not), and nearest-neighbor
 * highlighting for a clicked focal package.
 *
 * The rendered point/arrow set is exactly the fetched payload; the only
 * client-side knob passed through is show_incorrect (a server-side filter).
 * Responses superseded by newer control state are discarded by sequence.
 */

import { ApiClient, LatestGate, ModelEntry, PredictionView } from "./api.js";

export interface Rotation {
  yaw: number;
  pitch: number;
}

/** Orthographic projection of a 2-D/3-D coordinate under yaw+pitch rotation. */
export function rotatePoint(coords: number[], rotation: Rotation): [number, number] {
  const [x, y] = [coords[0] ?? 0, coords[1] ?? 0];
  const z = coords[2] ?? 0;
  const cosYaw = Math.cos(rotation.yaw);
  const sinYaw = Math.sin(rotation.yaw);
  const cosPitch = Math.cos(rotation.pitch);
  const sinPitch = Math.sin(rotation.pitch);
  const x1 = cosYaw * x + sinYaw * z;
  const z1 = -sinYaw * x + cosYaw * z;
  const y1 = cosPitch * y - sinPitch * z1;
  return [x1, y1];
}

export interface SceneDot {
  packageId: string;
  x: number;
  y: number;
  trueLabel: string;
  predictedLabel: string;
  correct: boolean;
  confidence: number;
  highlighted: boolean;
  focal: boolean;
}

export interface SceneArrow {
  from: string;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  color: "green" | "red";
}

export interface Scene {
  dots: SceneDot[];
  arrows: SceneArrow[];
}

/**
 * Pure scene geometry: every payload point becomes exactly one dot and every
 * payload arrow exactly one line, mapped into a width x height viewport.
 */
export function computeScene(
  view: PredictionView,
  rotation: Rotation,
  width: number,
  height: number,
): Scene {
  const projected = new Map<string, [number, number]>();
  const raw: Array<[number, number]> = [];
  for (const point of view.points) {
    const position = rotatePoint(point.coords, rotation);
    projected.set(point.package_id, position);
    raw.push(position);
  }
  const targets = new Map<string, [number, number]>();
  for (const arrow of view.arrows) {
    const position = rotatePoint(arrow.to, rotation);
    targets.set(arrow.from, position);
    raw.push(position);
  }
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const [x, y] of raw) {
    minX = Math.min(minX, x);
    maxX = Math.max(maxX, x);
    minY = Math.min(minY, y);
    maxY = Math.max(maxY, y);
  }
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const pad = 24;
  const toCanvas = ([x, y]: [number, number]): [number, number] => [
    pad + ((x - minX) / spanX) * (width - 2 * pad),
    height - pad - ((y - minY) / spanY) * (height - 2 * pad),
  ];
  const neighborIds = new Set((view.neighbors ?? []).map((n) => n.package_id));
  const dots = view.points.map((point) => {
    const [x, y] = toCanvas(projected.get(point.package_id)!);
    return {
      packageId: point.package_id,
      x,
      y,
      trueLabel: point.true_label,
      predictedLabel: point.predicted_label,
      correct: point.predicted_label === point.true_label,
      confidence: point.confidence,
      highlighted: neighborIds.has(point.package_id),
      focal: view.focal === point.package_id,
    };
  });
  const arrows = view.arrows.map((arrow) => {
    const [x1, y1] = toCanvas(projected.get(arrow.from)!);
    const [x2, y2] = toCanvas(targets.get(arrow.from)!);
    return { from: arrow.from, x1, y1, x2, y2, color: arrow.color };
  });
  return { dots, arrows };
}

const PALETTE = ["#3366cc", "#dc7633", "#17a589", "#8e44ad", "#c0392b", "#2c3e50", "#b7950b"];

export function labelColor(label: string, labels: string[]): string {
  return PALETTE[Math.max(0, labels.indexOf(label)) % PALETTE.length];
}

export class Explorer {
  readonly element: HTMLElement;
  models: ModelEntry[] = [];
  modelId: string | null = null;
  dims: 2 | 3 = 2;
  kNeighbors = 5;
  showIncorrect = true;
  focal: string | null = null;
  rotation: Rotation = { yaw: 0.5, pitch: 0.35 };
  view: PredictionView | null = null;
  status = "";
  width = 720;
  height = 480;
  private gate = new LatestGate();
  private dragging: { x: number; y: number } | null = null;

  constructor(private client: ApiClient) {
    this.element = document.createElement("section");
    this.element.className = "explorer";
  }

  async load(): Promise<void> {
    const body = await this.client.getModels();
    this.models = body.models.filter((m) => m.evaluation_id !== null);
    if (this.models.length && this.modelId === null) {
      this.modelId = this.models[0].artifact_id;
      await this.refetch();
      return;
    }
    this.render();
  }

  /** Every control change funnels here; stale responses are dropped. */
  async refetch(): Promise<void> {
    if (this.modelId === null) {
      this.view = null;
      this.render();
      return;
    }
    const token = this.gate.next();
    try {
      const view = await this.client.getPredictionView(this.modelId, {
        dims: this.dims,
        k: this.kNeighbors,
        showIncorrect: this.showIncorrect,
        focal: this.focal,
      });
      if (!this.gate.isCurrent(token)) {
        return;
      }
      this.view = view;
      this.status = "";
    } catch (error) {
      if (!this.gate.isCurrent(token)) {
        return;
      }
      this.status = String(error instanceof Error ? error.message : error);
      this.view = null;
    }
    this.render();
  }

  async setModel(modelId: string): Promise<void> {
    this.modelId = modelId;
    this.focal = null;
    await this.refetch();
  }

  async setDims(dims: 2 | 3): Promise<void> {
    this.dims = dims;
    await this.refetch();
  }

  async setK(k: number): Promise<void> {
    this.kNeighbors = k;
    await this.refetch();
  }

  async setShowIncorrect(show: boolean): Promise<void> {
    this.showIncorrect = show;
    await this.refetch();
  }

  async setFocal(packageId: string | null): Promise<void> {
    this.focal = packageId;
    await this.refetch();
  }

  scene(): Scene | null {
    if (!this.view) {
      return null;
    }
    const rotation = this.dims === 3 ? this.rotation : { yaw: 0, pitch: 0 };
    return computeScene(this.view, rotation, this.width, this.height);
  }

  /** Nearest dot within a 10px radius of a canvas position. */
  hitTest(x: number, y: number): SceneDot | null {
    const scene = this.scene();
    if (!scene) {
      return null;
    }
    let best: SceneDot | null = null;
    let bestDistance = 10;
    for (const dot of scene.dots) {
      const distance = Math.hypot(dot.x - x, dot.y - y);
      if (distance <= bestDistance) {
        best = dot;
        bestDistance = distance;
      }
    }
    return best;
  }

  render(): void {
    this.element.replaceChildren();
    const controls = document.createElement("div");
    controls.className = "explorer-controls";

    const modelSelect = document.createElement("select");
    modelSelect.className = "model-select";
    for (const model of this.models) {
      const option = document.createElement("option");
      option.value = model.artifact_id;
      option.textContent = model.name ?? model.artifact_id.slice(0, 12);
      option.selected = model.artifact_id === this.modelId;
      modelSelect.append(option);
    }
    modelSelect.addEventListener("change", () => void this.setModel(modelSelect.value));
    controls.append(modelSelect);

    const dimsSelect = document.createElement("select");
    dimsSelect.className = "dims-select";
    for (const dims of [2, 3]) {
      const option = document.createElement("option");
      option.value = String(dims);
      option.textContent = `${dims}D`;
      option.selected = dims === this.dims;
      dimsSelect.append(option);
    }
    dimsSelect.addEventListener("change", () =>
      void this.setDims(Number(dimsSelect.value) === 3 ? 3 : 2),
    );
    controls.append(dimsSelect);

    const kSlider = document.createElement("input");
    kSlider.type = "range";
    kSlider.className = "k-slider";
    kSlider.min = "1";
    kSlider.max = "25";
    kSlider.value = String(this.kNeighbors);
    kSlider.title = "number of nearest packages to highlight";
    kSlider.addEventListener("change", () => void this.setK(Number(kSlider.value)));
    controls.append(kSlider);

    const incorrectToggle = document.createElement("input");
    incorrectToggle.type = "checkbox";
    incorrectToggle.className = "show-incorrect";
    incorrectToggle.checked = this.showIncorrect;
    incorrectToggle.title = "show incorrectly predicted packages";
    incorrectToggle.addEventListener("change", () =>
      void this.setShowIncorrect(incorrectToggle.checked),
    );
    controls.append(incorrectToggle);
    this.element.append(controls);

    if (this.models.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = "no evaluated models yet - train one first";
      this.element.append(empty);
      return;
    }
    if (this.status) {
      const banner = document.createElement("div");
      banner.className = "error-banner";
      banner.textContent = this.status;
      this.element.append(banner);
    }

    const canvas = document.createElement("canvas");
    canvas.className = "scatter";
    canvas.width = this.width;
    canvas.height = this.height;
    canvas.addEventListener("mousedown", (event) => {
      this.dragging = { x: event.offsetX, y: event.offsetY };
    });
    canvas.addEventListener("mousemove", (event) => {
      if (this.dragging && this.dims === 3) {
        this.rotation = {
          yaw: this.rotation.yaw + (event.offsetX - this.dragging.x) * 0.01,
          pitch: this.rotation.pitch + (event.offsetY - this.dragging.y) * 0.01,
        };
        this.dragging = { x: event.offsetX, y: event.offsetY };
        this.draw(canvas);
      }
    });
    canvas.addEventListener("mouseup", (event) => {
      if (this.dragging) {
        const moved =
          Math.hypot(event.offsetX - this.dragging.x, event.offsetY - this.dragging.y) > 3;
        this.dragging = null;
        if (!moved) {
          const hit = this.hitTest(event.offsetX, event.offsetY);
          if (hit) {
            void this.setFocal(hit.packageId);
          }
        }
      }
    });
    this.element.append(canvas);
    this.draw(canvas);

    if (this.view?.focal && this.view.neighbors) {
      const panel = document.createElement("div");
      panel.className = "neighbor-panel";
      const heading = document.createElement("h4");
      heading.textContent = `nearest to ${this.view.focal.slice(0, 12)}`;
      panel.append(heading);
      const list = document.createElement("ol");
      list.className = "neighbor-list";
      for (const neighbor of this.view.neighbors) {
        const item = document.createElement("li");
        item.dataset.package = neighbor.package_id;
        item.textContent = `${neighbor.package_id.slice(0, 12)}  d=${neighbor.distance.toFixed(4)}`;
        list.append(item);
      }
      const clear = document.createElement("button");
      clear.className = "clear-focal";
      clear.textContent = "clear";
      clear.addEventListener("click", () => void this.setFocal(null));
      panel.append(list, clear);
      this.element.append(panel);
    }
  }

  private draw(canvas: HTMLCanvasElement): void {
    const scene = this.scene();
    const context = canvas.getContext?.("2d");
    if (!scene || !context) {
      return; // happy-dom has no canvas context; geometry stays testable via scene()
    }
    const labels = [...new Set(this.view!.points.map((p) => p.true_label))].sort();
    context.clearRect(0, 0, canvas.width, canvas.height);
    for (const arrow of scene.arrows) {
      context.strokeStyle = arrow.color === "green" ? "#1d8348" : "#c0392b";
      context.globalAlpha = 0.45;
      context.beginPath();
      context.moveTo(arrow.x1, arrow.y1);
      context.lineTo(arrow.x2, arrow.y2);
      context.stroke();
      const angle = Math.atan2(arrow.y2 - arrow.y1, arrow.x2 - arrow.x1);
      context.beginPath();
      context.moveTo(arrow.x2, arrow.y2);
      context.lineTo(
        arrow.x2 - 7 * Math.cos(angle - 0.4),
        arrow.y2 - 7 * Math.sin(angle - 0.4),
      );
      context.lineTo(
        arrow.x2 - 7 * Math.cos(angle + 0.4),
        arrow.y2 - 7 * Math.sin(angle + 0.4),
      );
      context.closePath();
      context.fillStyle = context.strokeStyle;
      context.fill();
    }
    context.globalAlpha = 1;
    for (const dot of scene.dots) {
      context.beginPath();
      context.arc(dot.x, dot.y, dot.focal ? 7 : 4.5, 0, Math.PI * 2);
      context.fillStyle = labelColor(dot.trueLabel, labels);
      context.fill();
      if (!dot.correct) {
        context.strokeStyle = "#c0392b";
        context.lineWidth = 2;
        context.stroke();
      }
      if (dot.highlighted || dot.focal) {
        context.strokeStyle = "#f1c40f";
        context.lineWidth = 2.5;
        context.beginPath();
        context.arc(dot.x, dot.y, dot.focal ? 10 : 8, 0, Math.PI * 2);
        context.stroke();
      }
    }
  }
}

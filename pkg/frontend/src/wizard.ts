/**
 * Stage configuration wizard. Plugin-bearing stages (train, preprocess) are
 * fully schema-driven from /api/plugins; the other stages reuse the same
 * form machinery over static field descriptors. Submission is blocked until
 * client-side validation passes; server 400s attach per-field messages.
 */

import { ApiClient, ApiError, ParamDescriptor, PluginDescriptor } from "./api.js";
import { FormModel, createFormModel, renderForm, setFieldErrors, validateForm } from "./forms.js";

const field = (
  name: string,
  kind: ParamDescriptor["kind"],
  def: unknown,
  description: string,
  range: Array<number | string> | null = null,
): ParamDescriptor => ({
  name,
  kind,
  default: def,
  description,
  range,
  feature_sensitive_only: false,
});

/** Static (non-plugin) request fields per stage, same descriptor shape. */
const STAGE_FIELDS: Record<string, ParamDescriptor[]> = {
  crawl: [
    field("index_url", "string", "", "Location of the corpus index.json (path or URL)."),
    field("metadata_url", "string", "", "Base path or URL of the metadata source."),
  ],
  extract: [
    field("package_ids", "string", "all", 'Comma-separated package ids, or "all".'),
    field(
      "families",
      "string",
      "apis,features,intents,manifest,permissions,sensors,strings",
      "Comma-separated feature families to extract.",
    ),
  ],
  select: [
    field("name", "string", "", "Unique name for the selected dataset."),
    field("families", "string", "permissions,apis", "Comma-separated feature families."),
    field("categories", "string", "", "Comma-separated category labels to include."),
    field("balanced", "bool", false, "Down-sample every class to the smallest class size."),
    field(
      "inclusion_fraction",
      "float",
      1.0,
      "Fraction of distinct tokens kept per family, by document frequency.",
      [0, 1],
    ),
  ],
  merge: [
    field("name", "string", "", "Unique name for the merged dataset."),
    field("selected", "string", "", "Selected dataset name or artifact id."),
    field(
      "merge_groups",
      "string",
      "{}",
      'JSON object mapping new labels to category lists, e.g. {"fun": ["game"]}.',
    ),
    field("train_fraction", "float", 0.8, "Fraction of rows placed in the train split.", [0, 1]),
  ],
  preprocess: [
    field("name", "string", "", "Unique name for the processed dataset."),
    field("merged", "string", "", "Merged dataset name or artifact id."),
  ],
  train: [
    field("model_name", "string", "", "Unique name for the trained model."),
    field("dataset", "string", "", "Processed dataset name or artifact id."),
  ],
};

const STAGES = ["crawl", "extract", "select", "merge", "preprocess", "train"] as const;

interface ChainStep {
  plugin: PluginDescriptor;
  model: FormModel;
  targetFamilies: string; // "all" or comma list
}

export class StageWizard {
  readonly element: HTMLElement;
  stage: string = "train";
  plugins: PluginDescriptor[] = [];
  stageModel: FormModel | null = null;
  pluginModel: FormModel | null = null;
  selectedPlugin: PluginDescriptor | null = null;
  chain: ChainStep[] = [];
  masterSeedRaw = "0";
  status: string = "";
  onSubmitted: (taskId: string) => void = () => {};

  constructor(private client: ApiClient) {
    this.element = document.createElement("section");
    this.element.className = "wizard";
  }

  async load(): Promise<void> {
    const body = await this.client.getPlugins();
    this.plugins = body.plugins;
    this.setStage(this.stage);
  }

  trainPlugins(): PluginDescriptor[] {
    return this.plugins.filter((p) => p.stage === "train");
  }

  preprocessPlugins(): PluginDescriptor[] {
    return this.plugins.filter((p) => p.stage === "preprocess");
  }

  setStage(stage: string): void {
    this.stage = stage;
    this.stageModel = createFormModel({
      plugin_id: `stage-${stage}`,
      version: "",
      stage,
      algorithm_class: null,
      title: stage,
      description: "",
      feature_sensitive: false,
      params: STAGE_FIELDS[stage] ?? [],
    });
    this.chain = [];
    if (stage === "train") {
      this.selectPlugin(this.trainPlugins()[0] ?? null);
    } else {
      this.selectedPlugin = null;
      this.pluginModel = null;
    }
    this.render();
  }

  selectPlugin(descriptor: PluginDescriptor | null): void {
    this.selectedPlugin = descriptor;
    this.pluginModel = descriptor ? createFormModel(descriptor) : null;
    this.render();
  }

  addChainStep(descriptor: PluginDescriptor): void {
    this.chain.push({
      plugin: descriptor,
      model: createFormModel(descriptor),
      targetFamilies: "all",
    });
    this.render();
  }

  removeChainStep(index: number): void {
    this.chain.splice(index, 1);
    this.render();
  }

  /** Assemble the request body; returns null (and shows errors) when invalid. */
  buildRequest(): Record<string, unknown> | null {
    if (!this.stageModel) {
      return null;
    }
    const seed = /^\d+$/.test(this.masterSeedRaw.trim())
      ? parseInt(this.masterSeedRaw.trim(), 10)
      : null;
    if (seed === null) {
      this.status = "master seed must be a non-negative integer";
      return null;
    }
    const stageValues = validateForm(this.stageModel);
    if (!stageValues) {
      return null;
    }
    for (const name of ["name", "model_name", "index_url", "metadata_url", "categories",
                        "selected", "merged", "dataset"]) {
      const fieldState = this.stageModel.fields.get(name);
      if (fieldState && fieldState.raw.trim() === "") {
        fieldState.error = "required";
        return null;
      }
    }
    const body: Record<string, unknown> = { master_seed: seed };
    const csv = (value: unknown): string[] =>
      String(value)
        .split(",")
        .map((s) => s.trim())
        .filter((s) => s.length > 0);
    switch (this.stage) {
      case "crawl":
        body.index_url = stageValues.index_url;
        body.metadata_url = stageValues.metadata_url;
        break;
      case "extract":
        body.package_ids =
          stageValues.package_ids === "all" ? "all" : csv(stageValues.package_ids);
        body.families = csv(stageValues.families);
        break;
      case "select":
        body.name = stageValues.name;
        body.families = csv(stageValues.families);
        body.categories = csv(stageValues.categories);
        body.balanced = stageValues.balanced;
        body.inclusion_fraction = stageValues.inclusion_fraction;
        break;
      case "merge": {
        body.name = stageValues.name;
        body.selected = stageValues.selected;
        body.train_fraction = stageValues.train_fraction;
        let groups: unknown;
        try {
          groups = JSON.parse(String(stageValues.merge_groups));
        } catch {
          groups = null;
        }
        if (!groups || typeof groups !== "object" || Array.isArray(groups)) {
          const fieldState = this.stageModel.fields.get("merge_groups");
          if (fieldState) {
            fieldState.error = "must be a JSON object of category lists";
          }
          return null;
        }
        body.merge_groups = groups;
        break;
      }
      case "preprocess": {
        body.name = stageValues.name;
        body.merged = stageValues.merged;
        const chain = [];
        for (const step of this.chain) {
          const params = validateForm(step.model);
          if (!params) {
            return null;
          }
          chain.push({
            plugin_id: step.plugin.plugin_id,
            params,
            target_families:
              step.targetFamilies.trim() === "all" ? "all" : csv(step.targetFamilies),
          });
        }
        body.chain = chain;
        break;
      }
      case "train": {
        if (!this.selectedPlugin || !this.pluginModel) {
          this.status = "choose an algorithm";
          return null;
        }
        const hyperparams = validateForm(this.pluginModel);
        if (!hyperparams) {
          return null;
        }
        body.model_name = stageValues.model_name;
        body.dataset = stageValues.dataset;
        body.algorithm_class = this.selectedPlugin.algorithm_class;
        body.algorithm_id = this.selectedPlugin.plugin_id;
        body.hyperparams = hyperparams;
        break;
      }
    }
    return body;
  }

  async submit(): Promise<string | null> {
    this.status = "";
    const body = this.buildRequest();
    if (body === null) {
      this.render();
      return null; // blocked client-side; no request sent
    }
    try {
      const response = await this.client.launchStage(this.stage, body);
      this.status = `task ${response.task_id} submitted`;
      this.render();
      this.onSubmitted(response.task_id);
      return response.task_id;
    } catch (error) {
      if (error instanceof ApiError) {
        this.applyServerErrors(error.details);
        this.status = error.message;
      } else {
        this.status = String(error);
      }
      this.render();
      return null;
    }
  }

  private applyServerErrors(details: Array<[string, string]>): void {
    if (this.stageModel) {
      setFieldErrors(this.stageModel, details);
    }
    if (this.pluginModel) {
      setFieldErrors(this.pluginModel, details);
    }
    for (const step of this.chain) {
      setFieldErrors(step.model, details);
    }
  }

  render(): void {
    this.element.replaceChildren();

    const stageBar = document.createElement("div");
    stageBar.className = "stage-bar";
    for (const stage of STAGES) {
      const button = document.createElement("button");
      button.textContent = stage;
      button.className = stage === this.stage ? "stage-tab active" : "stage-tab";
      button.addEventListener("click", () => this.setStage(stage));
      stageBar.append(button);
    }
    this.element.append(stageBar);

    const seedRow = document.createElement("div");
    seedRow.className = "form-row";
    seedRow.dataset.param = "master_seed";
    const seedLabel = document.createElement("label");
    seedLabel.textContent = "master_seed";
    const seedInput = document.createElement("input");
    seedInput.type = "number";
    seedInput.min = "0";
    seedInput.value = this.masterSeedRaw;
    seedInput.classList.add("param-control");
    seedInput.addEventListener("input", () => {
      this.masterSeedRaw = seedInput.value;
    });
    const seedDescription = document.createElement("small");
    seedDescription.className = "param-description";
    seedDescription.textContent = "Master seed; every stage derives its own scoped seed from it.";
    seedRow.append(seedLabel, seedInput, seedDescription);
    this.element.append(seedRow);

    if (this.stageModel) {
      this.element.append(renderForm(this.stageModel));
    }

    if (this.stage === "train") {
      this.element.append(this.renderAlgorithmPicker());
      if (this.selectedPlugin && this.pluginModel) {
        const blurb = document.createElement("p");
        blurb.className = "plugin-description";
        blurb.textContent = `${this.selectedPlugin.title}: ${this.selectedPlugin.description}`;
        this.element.append(blurb, renderForm(this.pluginModel));
      }
    }

    if (this.stage === "preprocess") {
      this.element.append(this.renderChainBuilder());
    }

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = `launch ${this.stage}`;
    submit.addEventListener("click", () => void this.submit());
    this.element.append(submit);

    const status = document.createElement("p");
    status.className = "wizard-status";
    status.textContent = this.status;
    this.element.append(status);
  }

  private renderAlgorithmPicker(): HTMLElement {
    const wrap = document.createElement("div");
    wrap.className = "algorithm-picker";
    const classes = [...new Set(this.trainPlugins().map((p) => p.algorithm_class ?? ""))].sort();
    const classSelect = document.createElement("select");
    classSelect.className = "algorithm-class";
    const currentClass = this.selectedPlugin?.algorithm_class ?? classes[0];
    for (const cls of classes) {
      const option = document.createElement("option");
      option.value = cls;
      option.textContent = cls;
      option.selected = cls === currentClass;
      classSelect.append(option);
    }
    const pluginSelect = document.createElement("select");
    pluginSelect.className = "algorithm-plugin";
    const fill = (cls: string) => {
      pluginSelect.replaceChildren();
      for (const plugin of this.trainPlugins().filter((p) => p.algorithm_class === cls)) {
        const option = document.createElement("option");
        option.value = plugin.plugin_id;
        option.textContent = plugin.title;
        option.selected = plugin.plugin_id === this.selectedPlugin?.plugin_id;
        pluginSelect.append(option);
      }
    };
    fill(currentClass ?? "");
    classSelect.addEventListener("change", () => {
      const first = this.trainPlugins().find((p) => p.algorithm_class === classSelect.value);
      this.selectPlugin(first ?? null);
    });
    pluginSelect.addEventListener("change", () => {
      const plugin = this.trainPlugins().find((p) => p.plugin_id === pluginSelect.value);
      this.selectPlugin(plugin ?? null);
    });
    wrap.append(classSelect, pluginSelect);
    return wrap;
  }

  private renderChainBuilder(): HTMLElement {
    const wrap = document.createElement("div");
    wrap.className = "chain-builder";
    this.chain.forEach((step, index) => {
      const card = document.createElement("div");
      card.className = "chain-step";
      const heading = document.createElement("h4");
      heading.textContent = `${index + 1}. ${step.plugin.title}`;
      const blurb = document.createElement("small");
      blurb.className = "plugin-description";
      blurb.textContent = step.plugin.description;
      const target = document.createElement("input");
      target.className = "target-families";
      target.value = step.targetFamilies;
      target.title = 'Feature families this step touches ("all" or comma list).';
      target.addEventListener("input", () => {
        step.targetFamilies = target.value;
      });
      const remove = document.createElement("button");
      remove.textContent = "remove";
      remove.className = "remove-step";
      remove.addEventListener("click", () => this.removeChainStep(index));
      card.append(heading, blurb, target, renderForm(step.model), remove);
      wrap.append(card);
    });
    const picker = document.createElement("select");
    picker.className = "chain-picker";
    const placeholder = document.createElement("option");
    placeholder.textContent = "add step...";
    placeholder.value = "";
    picker.append(placeholder);
    for (const plugin of this.preprocessPlugins()) {
      const option = document.createElement("option");
      option.value = plugin.plugin_id;
      option.textContent = plugin.title;
      picker.append(option);
    }
    picker.addEventListener("change", () => {
      const plugin = this.preprocessPlugins().find((p) => p.plugin_id === picker.value);
      if (plugin) {
        this.addChainStep(plugin);
      }
    });
    wrap.append(picker);
    return wrap;
  }
}

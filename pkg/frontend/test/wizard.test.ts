import { beforeEach, describe, expect, it } from "vitest";

import { ApiError } from "../src/api.js";
import { StageWizard } from "../src/wizard.js";
import { FakeClient, PLUGINS, flush } from "./helpers.js";

async function makeWizard(): Promise<{ wizard: StageWizard; client: FakeClient }> {
  const client = new FakeClient();
  client.queue("getPlugins", { plugins: PLUGINS });
  const wizard = new StageWizard(client);
  await wizard.load();
  return { wizard, client };
}

describe("stage wizard", () => {
  let wizard: StageWizard;
  let client: FakeClient;

  beforeEach(async () => {
    ({ wizard, client } = await makeWizard());
  });

  it("train wizard renders controls for every hyperparameter with descriptions", () => {
    wizard.setStage("train");
    const autoencoder = PLUGINS.find((p) => p.plugin_id === "autoencoder")!;
    wizard.selectPlugin(autoencoder);
    for (const name of [
      "encoder_layers",
      "activation",
      "loss",
      "optimizer",
      "learning_rate",
      "batch_size",
      "epochs",
    ]) {
      const row = wizard.element.querySelector(`[data-param="${name}"]`);
      expect(row, name).not.toBeNull();
      expect(row!.querySelector(".param-description")!.textContent!.length).toBeGreaterThan(0);
    }
    expect(wizard.element.querySelector('[data-param="model_name"]')).not.toBeNull();
    expect(wizard.element.querySelector('[data-param="master_seed"]')).not.toBeNull();
  });

  it("empty model_name blocks submission client-side (no request sent)", async () => {
    wizard.setStage("train");
    wizard.stageModel!.fields.get("model_name")!.raw = "";
    wizard.stageModel!.fields.get("dataset")!.raw = "proc";
    const taskId = await wizard.submit();
    expect(taskId).toBeNull();
    expect(client.callsTo("launchStage").length).toBe(0);
    expect(wizard.stageModel!.fields.get("model_name")!.error).toBe("required");
    const row = wizard.element.querySelector('[data-param="model_name"] .field-error')!;
    expect(row.textContent).toBe("required");
  });

  it("invalid hyperparams block submission client-side", async () => {
    wizard.setStage("train");
    wizard.stageModel!.fields.get("model_name")!.raw = "m";
    wizard.stageModel!.fields.get("dataset")!.raw = "proc";
    wizard.pluginModel!.fields.get("learning_rate")!.raw = "-5";
    const taskId = await wizard.submit();
    expect(taskId).toBeNull();
    expect(client.callsTo("launchStage").length).toBe(0);
  });

  it("valid train submission posts the assembled body and navigates", async () => {
    client.queue("launchStage", { task_id: "t-1" });
    let navigated: string | null = null;
    wizard.onSubmitted = (taskId) => {
      navigated = taskId;
    };
    wizard.setStage("train");
    wizard.masterSeedRaw = "42";
    wizard.stageModel!.fields.get("model_name")!.raw = "demo";
    wizard.stageModel!.fields.get("dataset")!.raw = "proc-1";
    const knn = PLUGINS.find((p) => p.plugin_id === "knn")!;
    wizard.selectPlugin(knn);
    wizard.pluginModel!.fields.get("k")!.raw = "3";
    const taskId = await wizard.submit();
    expect(taskId).toBe("t-1");
    expect(navigated).toBe("t-1");
    const [stage, body] = client.callsTo("launchStage")[0].args as [string, Record<string, unknown>];
    expect(stage).toBe("train");
    expect(body.master_seed).toBe(42);
    expect(body.algorithm_id).toBe("knn");
    expect(body.algorithm_class).toBe("classical");
    expect(body.hyperparams).toEqual({ k: 3, distance: "euclidean" });
  });

  it("server 400 attaches per-field messages to controls", async () => {
    client.queue(
      "launchStage",
      new ApiError(400, "validation-error", "invalid parameters", [
        ["learning_rate", "below minimum"],
      ]),
    );
    wizard.setStage("train");
    wizard.stageModel!.fields.get("model_name")!.raw = "m";
    wizard.stageModel!.fields.get("dataset")!.raw = "proc";
    const softmax = PLUGINS.find((p) => p.plugin_id === "softmax_regression")!;
    wizard.selectPlugin(softmax);
    const taskId = await wizard.submit();
    await flush();
    expect(taskId).toBeNull();
    expect(wizard.pluginModel!.fields.get("learning_rate")!.error).toBe("below minimum");
    const slot = wizard.element.querySelector('[data-param="learning_rate"] .field-error')!;
    expect(slot.textContent).toBe("below minimum");
  });

  it("a newly registered plugin appears with zero UI changes", async () => {
    const novel = {
      plugin_id: "robust_scaler",
      version: "1.0",
      stage: "preprocess",
      algorithm_class: null,
      title: "Robust scaler",
      description: "Scales by interquartile range.",
      feature_sensitive: true,
      params: [
        {
          name: "quantile",
          kind: "float" as const,
          default: 0.25,
          description: "Lower quantile bound.",
          range: [0, 0.5] as Array<number | string>,
          feature_sensitive_only: false,
        },
      ],
    };
    const freshClient = new FakeClient();
    freshClient.queue("getPlugins", { plugins: [...PLUGINS, novel] });
    const freshWizard = new StageWizard(freshClient);
    await freshWizard.load();
    freshWizard.setStage("preprocess");
    const picker = freshWizard.element.querySelector(".chain-picker")!;
    const options = [...picker.querySelectorAll("option")].map((o) => o.value);
    expect(options).toContain("robust_scaler");
    freshWizard.addChainStep(novel);
    const row = freshWizard.element.querySelector('[data-param="quantile"]');
    expect(row).not.toBeNull();
    expect(row!.querySelector(".param-description")!.textContent).toBe("Lower quantile bound.");
  });

  it("merge_groups must be a JSON object", async () => {
    wizard.setStage("merge");
    wizard.stageModel!.fields.get("name")!.raw = "m";
    wizard.stageModel!.fields.get("selected")!.raw = "sel";
    wizard.stageModel!.fields.get("merge_groups")!.raw = "[1,2]";
    const taskId = await wizard.submit();
    expect(taskId).toBeNull();
    expect(client.callsTo("launchStage").length).toBe(0);
    expect(wizard.stageModel!.fields.get("merge_groups")!.error).toContain("JSON object");
  });

  it("preprocess chain steps validate before submission", async () => {
    wizard.setStage("preprocess");
    wizard.stageModel!.fields.get("name")!.raw = "p";
    wizard.stageModel!.fields.get("merged")!.raw = "mrg";
    const binarizer = PLUGINS.find((p) => p.plugin_id === "binarizer")!;
    wizard.addChainStep(binarizer);
    wizard.chain[0].model.fields.get("threshold")!.raw = "not-a-number";
    const taskId = await wizard.submit();
    expect(taskId).toBeNull();
    expect(client.callsTo("launchStage").length).toBe(0);
    client.queue("launchStage", { task_id: "t-2" });
    wizard.chain[0].model.fields.get("threshold")!.raw = "0.3";
    const retry = await wizard.submit();
    expect(retry).toBe("t-2");
    const [, body] = client.callsTo("launchStage")[0].args as [string, Record<string, unknown>];
    expect(body.chain).toEqual([
      { plugin_id: "binarizer", params: { threshold: 0.3 }, target_families: "all" },
    ]);
  });
});

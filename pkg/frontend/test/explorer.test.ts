import { beforeEach, describe, expect, it } from "vitest";

import { PredictionView } from "../src/api.js";
import { Explorer, computeScene, rotatePoint } from "../src/explorer.js";
import { FakeClient, flush, makeView } from "./helpers.js";

const MODELS = {
  models: [
    { artifact_id: "m1", name: "demo", created_at: "2024-05-01", evaluation_id: "e1" },
    { artifact_id: "m2", name: "unevaluated", created_at: "2024-05-01", evaluation_id: null },
  ],
};

async function makeExplorer(view: PredictionView = makeView()) {
  const client = new FakeClient();
  client.queue("getModels", MODELS);
  client.queue("getPredictionView", view);
  const explorer = new Explorer(client);
  await explorer.load();
  return { explorer, client };
}

describe("scene geometry", () => {
  it("renders exactly the fetched payload: one dot per point, one line per arrow", () => {
    const view = makeView();
    const scene = computeScene(view, { yaw: 0, pitch: 0 }, 720, 480);
    expect(scene.dots.map((d) => d.packageId)).toEqual(view.points.map((p) => p.package_id));
    expect(scene.arrows.map((a) => a.from)).toEqual(view.arrows.map((a) => a.from));
  });

  it("arrow colors always match predicted/true equality of the payload", () => {
    const view = makeView();
    const scene = computeScene(view, { yaw: 0, pitch: 0 }, 720, 480);
    const correctness = new Map(scene.dots.map((d) => [d.packageId, d.correct]));
    for (const arrow of scene.arrows) {
      expect(arrow.color).toBe(correctness.get(arrow.from) ? "green" : "red");
    }
  });

  it("3-D rotation changes the projection but keeps every point present", () => {
    const coords = [
      [0, 0, 0],
      [4, 0.5, 0],
      [1, 3, 2],
    ];
    const view = makeView({
      dims: 3,
      points: makeView().points.map((p, i) => ({ ...p, coords: coords[i] })),
      arrows: [],
    });
    const sceneA = computeScene(view, { yaw: 0.3, pitch: 0.2 }, 720, 480);
    const sceneB = computeScene(view, { yaw: 1.4, pitch: -0.7 }, 720, 480);
    expect(sceneA.dots.length).toBe(3);
    expect(sceneB.dots.length).toBe(3);
    expect(sceneA.dots.map((d) => [d.x, d.y])).not.toEqual(sceneB.dots.map((d) => [d.x, d.y]));
  });

  it("rotatePoint at zero rotation is the identity on x,y", () => {
    expect(rotatePoint([3, 4, 5], { yaw: 0, pitch: 0 })).toEqual([3, 4]);
  });

  it("neighbors of the payload are flagged highlighted", () => {
    const view = makeView({
      focal: "p1",
      neighbors: [{ package_id: "p3", distance: 0.5 }],
    });
    const scene = computeScene(view, { yaw: 0, pitch: 0 }, 720, 480);
    const byId = new Map(scene.dots.map((d) => [d.packageId, d]));
    expect(byId.get("p3")!.highlighted).toBe(true);
    expect(byId.get("p1")!.focal).toBe(true);
    expect(byId.get("p2")!.highlighted).toBe(false);
  });
});

describe("explorer view", () => {
  it("lists only evaluated models and fetches the first", async () => {
    const { explorer, client } = await makeExplorer();
    const options = [...explorer.element.querySelectorAll(".model-select option")];
    expect(options.map((o) => (o as HTMLOptionElement).value)).toEqual(["m1"]);
    expect(client.callsTo("getPredictionView").length).toBe(1);
  });

  it("show_incorrect toggle refetches and removes exactly the mispredicted", async () => {
    const full = makeView();
    const filtered = makeView({
      show_incorrect: false,
      points: full.points.filter((p) => p.predicted_label === p.true_label),
      arrows: full.arrows.filter((a) => a.color === "green"),
    });
    const { explorer, client } = await makeExplorer(full);
    client.queue("getPredictionView", filtered);
    const toggle = explorer.element.querySelector<HTMLInputElement>(".show-incorrect")!;
    toggle.checked = false;
    toggle.dispatchEvent(new Event("change"));
    await flush();
    await flush();
    const [, options] = client.callsTo("getPredictionView")[1].args as [string, { showIncorrect: boolean }];
    expect(options.showIncorrect).toBe(false);
    const scene = explorer.scene()!;
    expect(scene.dots.map((d) => d.packageId)).toEqual(["p1", "p3"]); // p2 was mispredicted
    expect(scene.dots.every((d) => d.correct)).toBe(true);
    expect(scene.arrows.every((a) => a.color === "green")).toBe(true);
    // green arrows unchanged relative to the full payload
    expect(scene.arrows.map((a) => a.from)).toEqual(["p1", "p3"]);
  });

  it("dims switch refetches with dims=3 and uses the third coordinate", async () => {
    const { explorer, client } = await makeExplorer();
    client.queue(
      "getPredictionView",
      makeView({
        dims: 3,
        points: makeView().points.map((p) => ({ ...p, coords: [...p.coords, 1.5] })),
      }),
    );
    const dims = explorer.element.querySelector<HTMLSelectElement>(".dims-select")!;
    dims.value = "3";
    dims.dispatchEvent(new Event("change"));
    await flush();
    await flush();
    const [, options] = client.callsTo("getPredictionView")[1].args as [string, { dims: number }];
    expect(options.dims).toBe(3);
    expect(explorer.view!.points[0].coords.length).toBe(3);
  });

  it("clicking a point sets it focal and requests exactly k neighbors", async () => {
    const { explorer, client } = await makeExplorer();
    explorer.kNeighbors = 2;
    client.queue(
      "getPredictionView",
      makeView({
        focal: "p1",
        neighbors: [
          { package_id: "p2", distance: 0.1 },
          { package_id: "p3", distance: 0.2 },
        ],
      }),
    );
    await explorer.setFocal("p1");
    const [, options] = client.callsTo("getPredictionView")[1].args as [
      string,
      { focal: string | null; k: number },
    ];
    expect(options.focal).toBe("p1");
    expect(options.k).toBe(2);
    const items = explorer.element.querySelectorAll(".neighbor-list li");
    expect(items.length).toBe(2);
    const scene = explorer.scene()!;
    expect(scene.dots.filter((d) => d.highlighted).length).toBe(2);
  });

  it("hit test finds the nearest rendered dot", async () => {
    const { explorer } = await makeExplorer();
    const scene = explorer.scene()!;
    const target = scene.dots[1];
    const hit = explorer.hitTest(target.x + 2, target.y - 2);
    expect(hit!.packageId).toBe(target.packageId);
    expect(explorer.hitTest(-100, -100)).toBeNull();
  });

  it("stale prediction views are discarded by sequence number", async () => {
    const { explorer, client } = await makeExplorer();
    let resolveSlow: (view: PredictionView) => void = () => {};
    const slow = new Promise<PredictionView>((resolve) => {
      resolveSlow = resolve;
    });
    client.queue("getPredictionView", () => slow);
    client.queue("getPredictionView", makeView({ dims: 3 }));
    const first = explorer.setDims(3); // slow request in flight
    const second = explorer.setK(9); // newer request wins
    await second;
    resolveSlow(makeView({ dims: 2, points: [] }));
    await first;
    expect(explorer.view!.points.length).toBe(3); // stale empty payload dropped
  });

  it("no evaluated models shows the empty-state prompt", async () => {
    const client = new FakeClient();
    client.queue("getModels", { models: [] });
    const explorer = new Explorer(client);
    await explorer.load();
    expect(explorer.element.querySelector(".empty-state")!.textContent).toContain(
      "no evaluated models",
    );
  });
});

/** Tab shell: wizard | dashboard | packages | explorer, hash-routed. */

import { ApiClient } from "./api.js";
import { Dashboard } from "./dashboard.js";
import { Explorer } from "./explorer.js";
import { PackageBrowser } from "./packages.js";
import { StageWizard } from "./wizard.js";

const TABS = ["wizard", "dashboard", "packages", "explorer"] as const;
type Tab = (typeof TABS)[number];

export class App {
  readonly element: HTMLElement;
  readonly wizard: StageWizard;
  readonly dashboard: Dashboard;
  readonly packages: PackageBrowser;
  readonly explorer: Explorer;
  active: Tab = "wizard";

  constructor(client: ApiClient) {
    this.element = document.createElement("div");
    this.element.className = "app";
    this.wizard = new StageWizard(client);
    this.dashboard = new Dashboard(client);
    this.packages = new PackageBrowser(client);
    this.explorer = new Explorer(client);
    this.wizard.onSubmitted = () => this.show("dashboard");
  }

  async start(): Promise<void> {
    await this.wizard.load().catch(() => undefined);
    this.show((window.location.hash.replace("#/", "") as Tab) || "wizard");
    window.addEventListener("hashchange", () => {
      const tab = window.location.hash.replace("#/", "") as Tab;
      if (TABS.includes(tab) && tab !== this.active) {
        this.show(tab);
      }
    });
  }

  show(tab: Tab): void {
    if (!TABS.includes(tab)) {
      tab = "wizard";
    }
    this.active = tab;
    window.location.hash = `#/${tab}`;
    this.dashboard.stop();
    this.element.replaceChildren();

    const nav = document.createElement("nav");
    for (const name of TABS) {
      const button = document.createElement("button");
      button.textContent = name;
      button.className = name === tab ? "tab active" : "tab";
      button.addEventListener("click", () => this.show(name));
      nav.append(button);
    }
    this.element.append(nav);

    if (tab === "wizard") {
      this.element.append(this.wizard.element);
      this.wizard.render();
    } else if (tab === "dashboard") {
      this.element.append(this.dashboard.element);
      this.dashboard.start();
    } else if (tab === "packages") {
      this.element.append(this.packages.element);
      void this.packages.refresh();
    } else {
      this.element.append(this.explorer.element);
      void this.explorer.load();
    }
  }
}

export function boot(): void {
  const app = new App(new ApiClient(""));
  document.body.append(app.element);
  void app.start();
}

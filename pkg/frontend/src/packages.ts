/**
 * Package browser with category voting: paged table of crawled/uploaded
 * packages, per-family extraction progress out of the seven families, the
 * current resolved label, and one-click vote buttons.
 */

import { ApiClient, LatestGate, PackagePage } from "./api.js";

export const FAMILY_COUNT = 7;

export class PackageBrowser {
  readonly element: HTMLElement;
  page: PackagePage | null = null;
  offset = 0;
  limit = 10;
  voter = "anonymous";
  toast: string | null = null;
  private gate = new LatestGate();

  constructor(private client: ApiClient) {
    this.element = document.createElement("section");
    this.element.className = "packages";
  }

  async refresh(): Promise<void> {
    const token = this.gate.next();
    const page = await this.client.getPackages(this.offset, this.limit);
    if (!this.gate.isCurrent(token)) {
      return;
    }
    this.page = page;
    this.render();
  }

  async nextPage(): Promise<void> {
    this.offset += this.limit;
    await this.refresh();
  }

  async previousPage(): Promise<void> {
    this.offset = Math.max(0, this.offset - this.limit);
    await this.refresh();
  }

  async vote(packageId: string, category: string): Promise<void> {
    try {
      await this.client.vote(packageId, category, this.voter);
      this.toast = null;
    } catch (error) {
      this.toast = String(error instanceof Error ? error.message : error);
    }
    await this.refresh();
  }

  /** Categories offered as one-click buttons: labels seen on this page. */
  knownCategories(): string[] {
    const seen = new Set<string>();
    for (const item of this.page?.items ?? []) {
      if (item.resolved_label) {
        seen.add(item.resolved_label.category);
      }
      const category = item.metadata["category"];
      if (typeof category === "string" && category) {
        seen.add(category);
      }
    }
    return [...seen].sort();
  }

  render(): void {
    this.element.replaceChildren();
    if (this.toast) {
      const toast = document.createElement("div");
      toast.className = "toast";
      toast.textContent = this.toast;
      this.element.append(toast);
    }
    const page = this.page;
    if (!page) {
      return;
    }

    const voterRow = document.createElement("div");
    voterRow.className = "voter-row";
    const voterLabel = document.createElement("label");
    voterLabel.textContent = "voter";
    const voterInput = document.createElement("input");
    voterInput.className = "voter-name";
    voterInput.value = this.voter;
    voterInput.addEventListener("input", () => {
      this.voter = voterInput.value || "anonymous";
    });
    voterRow.append(voterLabel, voterInput);
    this.element.append(voterRow);

    if (page.items.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = "no packages on this page";
      this.element.append(empty);
    } else {
      const table = document.createElement("table");
      table.className = "package-table";
      const header = table.insertRow();
      for (const title of ["name", "version", "category", "rating", "progress", "label", "vote"]) {
        const cell = document.createElement("th");
        cell.textContent = title;
        header.append(cell);
      }
      const categories = this.knownCategories();
      for (const item of page.items) {
        const row = table.insertRow();
        row.dataset.package = item.package_id;
        row.insertCell().textContent = item.name;
        row.insertCell().textContent = item.version;
        row.insertCell().textContent = String(item.metadata["category"] ?? "");
        row.insertCell().textContent = String(item.metadata["rating"] ?? "");
        const progress = row.insertCell();
        progress.className = "progress";
        progress.textContent = `${item.completed_families.length}/${FAMILY_COUNT}`;
        const label = row.insertCell();
        label.className = "resolved-label";
        label.textContent = item.resolved_label
          ? `${item.resolved_label.category} (${item.resolved_label.source}` +
            `${item.resolved_label.tie ? ", tie" : ""})`
          : "unlabeled";
        const voteCell = row.insertCell();
        voteCell.className = "vote-buttons";
        for (const category of categories) {
          const button = document.createElement("button");
          button.className = "vote";
          button.dataset.category = category;
          button.textContent = category;
          button.addEventListener("click", () => void this.vote(item.package_id, category));
          voteCell.append(button);
        }
        const custom = document.createElement("input");
        custom.className = "vote-custom";
        custom.placeholder = "other...";
        custom.addEventListener("keydown", (event) => {
          if ((event as KeyboardEvent).key === "Enter" && custom.value.trim()) {
            void this.vote(item.package_id, custom.value.trim());
          }
        });
        voteCell.append(custom);
      }
      this.element.append(table);
    }

    const pager = document.createElement("div");
    pager.className = "pager";
    const previous = document.createElement("button");
    previous.className = "prev";
    previous.textContent = "prev";
    previous.disabled = this.offset === 0;
    previous.addEventListener("click", () => void this.previousPage());
    const next = document.createElement("button");
    next.className = "next";
    next.textContent = "next";
    next.disabled = this.offset + this.limit >= page.total;
    next.addEventListener("click", () => void this.nextPage());
    const position = document.createElement("span");
    position.textContent = `${this.offset + 1}-${Math.min(this.offset + this.limit, page.total)} of ${page.total}`;
    pager.append(previous, position, next);
    this.element.append(pager);
  }
}

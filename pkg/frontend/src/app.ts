/** Dashboard controller: one ViewState, one /cube request per change.
 *
 * State changes rewrite the hash fragment (shareable URLs, no page
 * loads) and refresh the grid. Responses apply latest-wins: a slow
 * request superseded by a newer state change is dropped on arrival.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderBanner, renderGrid, renderNotice } from "./grid.js";
import {
  defaultView,
  parseFilters,
  parseView,
  serializeFilters,
  serializeView,
  ViewState,
} from "./state.js";
import { AnalyticsMeta, ExperimentConfig } from "./types.js";

export interface DashboardHost {
  root: HTMLElement;
  client: ApiClient;
  getHash(): string;
  setHash(hash: string): void;
}

function option(value: string, selected: boolean): HTMLOptionElement {
  const el = document.createElement("option");
  el.value = value;
  el.textContent = value;
  el.selected = selected;
  return el;
}

export class Dashboard {
  view: ViewState = defaultView();
  private experiments: ExperimentConfig[] = [];
  private meta: Record<string, AnalyticsMeta> = {};
  private seq = 0;

  private controls!: HTMLElement;
  private noticeArea!: HTMLElement;
  private bannerArea!: HTMLElement;
  private gridArea!: HTMLElement;
  private statusArea!: HTMLElement;

  constructor(private host: DashboardHost) {}

  async init(): Promise<void> {
    this.buildSkeleton();
    try {
      const listing = await this.host.client.experiments();
      this.experiments = listing.experiments;
      this.meta = listing.analytics_meta;
    } catch (error) {
      this.showBanner(error);
      return;
    }
    const fromHash = parseView(this.host.getHash());
    if (fromHash.experiment === null) {
      const first = this.experiments.find(
        (e) => e.experiment_id in this.meta,
      );
      if (!first) {
        this.renderExperimentList("No experiment analytics built yet.");
        return;
      }
      fromHash.experiment = first.experiment_id;
    }
    if (!this.experiments.some(
        (e) => e.experiment_id === fromHash.experiment)) {
      this.renderExperimentList(
        `Unknown experiment ${fromHash.experiment}.`);
      return;
    }
    this.view = fromHash;
    this.fillVariantDefaults();
    this.renderControls();
    await this.refresh();
  }

  private buildSkeleton(): void {
    const root = this.host.root;
    root.replaceChildren();
    this.controls = document.createElement("div");
    this.controls.className = "controls";
    this.noticeArea = document.createElement("div");
    this.bannerArea = document.createElement("div");
    this.gridArea = document.createElement("div");
    this.gridArea.dataset.testid = "grid-area";
    this.statusArea = document.createElement("div");
    this.statusArea.className = "status";
    this.statusArea.dataset.testid = "status";
    root.append(this.controls, this.bannerArea, this.noticeArea,
                this.gridArea, this.statusArea);
  }

  private config(): ExperimentConfig | undefined {
    return this.experiments.find(
      (e) => e.experiment_id === this.view.experiment);
  }

  private experimentMeta(): AnalyticsMeta | undefined {
    return this.view.experiment ? this.meta[this.view.experiment] : undefined;
  }

  private fillVariantDefaults(): void {
    const config = this.config();
    if (!config) return;
    const tags = config.variants.map((v) => v.variant_tag);
    if (!this.view.controlVariant ||
        !tags.includes(this.view.controlVariant)) {
      this.view.controlVariant =
        config.variants.find((v) => v.is_control)?.variant_tag ?? tags[0];
    }
    if (!this.view.testVariant || !tags.includes(this.view.testVariant)) {
      this.view.testVariant =
        tags.find((t) => t !== this.view.controlVariant) ?? tags[0];
    }
  }

  private renderControls(): void {
    const meta = this.experimentMeta();
    const config = this.config();
    this.controls.replaceChildren();
    if (!config) return;

    const experimentSelect = document.createElement("select");
    experimentSelect.dataset.testid = "experiment-select";
    for (const exp of this.experiments) {
      experimentSelect.appendChild(option(
        exp.experiment_id, exp.experiment_id === this.view.experiment));
    }
    experimentSelect.addEventListener("change", () => {
      void this.flipExperiment(experimentSelect.value);
    });

    const numeratorSelect = document.createElement("select");
    numeratorSelect.dataset.testid = "numerator-select";
    for (const cube of meta?.cubes ?? [this.view.numerator]) {
      numeratorSelect.appendChild(
        option(cube, cube === this.view.numerator));
    }
    numeratorSelect.addEventListener("change", () => {
      void this.rotate(numeratorSelect.value);
    });

    const measureSelect = document.createElement("select");
    measureSelect.dataset.testid = "measure-select";
    for (const measure of meta?.measures ?? [this.view.measure]) {
      measureSelect.appendChild(
        option(measure, measure === this.view.measure));
    }
    measureSelect.addEventListener("change", () => {
      void this.setMeasure(measureSelect.value);
    });

    const variantSelects: HTMLSelectElement[] = [];
    for (const [testid, current] of [
      ["test-select", this.view.testVariant],
      ["control-select", this.view.controlVariant],
    ] as const) {
      const select = document.createElement("select");
      select.dataset.testid = testid;
      for (const variant of config.variants) {
        select.appendChild(
          option(variant.variant_tag, variant.variant_tag === current));
      }
      variantSelects.push(select);
    }
    const [testSelect, controlSelect] = variantSelects;
    testSelect.addEventListener("change", () => {
      void this.setVariants(testSelect.value, controlSelect.value);
    });
    controlSelect.addEventListener("change", () => {
      void this.setVariants(testSelect.value, controlSelect.value);
    });

    const filterInput = document.createElement("input");
    filterInput.dataset.testid = "filter-input";
    filterInput.placeholder = "filters, e.g. date:2024-01-05";
    filterInput.value = serializeFilters(this.view.filters);
    const apply = document.createElement("button");
    apply.dataset.testid = "filter-apply";
    apply.textContent = "apply";
    apply.addEventListener("click", () => {
      void this.setFilters(filterInput.value);
    });

    const label = (text: string, el: HTMLElement) => {
      const wrap = document.createElement("label");
      wrap.append(`${text} `, el);
      return wrap;
    };
    this.controls.append(
      label("experiment", experimentSelect),
      label("rotate to", numeratorSelect),
      label("measure", measureSelect),
      label("test", testSelect),
      label("control", controlSelect),
      label("filter", filterInput),
      apply,
    );
  }

  async rotate(numerator: string): Promise<void> {
    this.view.numerator = numerator;
    await this.refresh();
  }

  async setMeasure(measure: string): Promise<void> {
    this.view.measure = measure;
    await this.refresh();
  }

  async setFilters(raw: string): Promise<void> {
    this.view.filters = parseFilters(raw);
    await this.refresh();
  }

  async setVariants(test: string, control: string): Promise<void> {
    this.view.testVariant = test;
    this.view.controlVariant = control;
    await this.refresh();
  }

  /** Switch experiments in place, carrying settings that still apply.
   * Dimensions the new experiment lacks reset with a visible notice;
   * an id we have no config for falls back to the experiment list. */
  async flipExperiment(experimentId: string): Promise<void> {
    if (!this.experiments.some((e) => e.experiment_id === experimentId)) {
      this.renderExperimentList(`Unknown experiment ${experimentId}.`);
      return;
    }
    this.view.experiment = experimentId;
    const meta = this.meta[experimentId];
    const resets: string[] = [];
    if (meta && !meta.cubes.includes(this.view.numerator)) {
      resets.push(`dimension ${this.view.numerator}`);
      this.view.numerator = "_overall";
    }
    if (meta) {
      const kept: Record<string, string> = {};
      for (const [dim, value] of Object.entries(this.view.filters)) {
        if (dim === "date" || meta.filter_dims.includes(dim)) {
          kept[dim] = value;
        } else {
          resets.push(`filter ${dim}`);
        }
      }
      this.view.filters = kept;
    }
    this.view.testVariant = null;
    this.view.controlVariant = null;
    this.fillVariantDefaults();
    this.noticeArea.replaceChildren();
    if (resets.length) {
      this.noticeArea.appendChild(renderNotice(
        `Reset for ${experimentId}: ${resets.join(", ")}.`));
    }
    this.renderControls();
    await this.refresh();
  }

  renderExperimentList(reason: string): void {
    this.gridArea.replaceChildren();
    this.bannerArea.replaceChildren();
    const list = document.createElement("div");
    list.dataset.testid = "experiment-list";
    const heading = document.createElement("p");
    heading.textContent = `${reason} Pick an experiment:`;
    list.appendChild(heading);
    for (const exp of this.experiments) {
      const button = document.createElement("button");
      button.textContent = exp.experiment_id;
      button.addEventListener("click", () => {
        void this.flipExperiment(exp.experiment_id);
      });
      list.appendChild(button);
    }
    this.gridArea.appendChild(list);
  }

  private showBanner(error: unknown): void {
    const message = error instanceof ApiError
      ? `${error.status}: ${error.message}`
      : String(error);
    this.bannerArea.replaceChildren(renderBanner(message));
  }

  private async refresh(): Promise<void> {
    const mySeq = ++this.seq;
    this.host.setHash(serializeView(this.view));
    let payload;
    try {
      payload = await this.host.client.cube(this.view);
    } catch (error) {
      if (mySeq === this.seq) this.showBanner(error);
      return; // state (and the previous grid) stay put
    }
    if (mySeq !== this.seq) return; // superseded by a newer change
    this.bannerArea.replaceChildren();
    this.gridArea.replaceChildren(renderGrid(payload));
    this.statusArea.textContent =
      `${payload.experiment_id} | ${payload.cube} | ${payload.measure} | ` +
      `${payload.test_variant} vs ${payload.control_variant} | ` +
      `snapshot ${payload.snapshot}`;
  }
}

/** View state and its URL (hash) serialization.
 *
 * Every distinct state maps to exactly one /cube request, and the hash
 * fragment round-trips the state so any view is shareable as a link.
 */

export interface ViewState {
  experiment: string | null;
  numerator: string;
  measure: string;
  filters: Record<string, string>;
  testVariant: string | null;
  controlVariant: string | null;
}

export const DEFAULT_NUMERATOR = "_overall";
export const DEFAULT_MEASURE = "impressions";

export function defaultView(): ViewState {
  return {
    experiment: null,
    numerator: DEFAULT_NUMERATOR,
    measure: DEFAULT_MEASURE,
    filters: {},
    testVariant: null,
    controlVariant: null,
  };
}

export function serializeFilters(filters: Record<string, string>): string {
  return Object.keys(filters)
    .sort()
    .map((key) => `${key}:${filters[key]}`)
    .join(",");
}

export function parseFilters(raw: string): Record<string, string> {
  const filters: Record<string, string> = {};
  for (const clause of raw.split(",")) {
    if (!clause) continue;
    const idx = clause.indexOf(":");
    if (idx <= 0) continue;
    filters[clause.slice(0, idx).trim()] = clause.slice(idx + 1).trim();
  }
  return filters;
}

export function serializeView(view: ViewState): string {
  const params = new URLSearchParams();
  if (view.experiment) params.set("experiment", view.experiment);
  params.set("numerator", view.numerator);
  params.set("measure", view.measure);
  const filters = serializeFilters(view.filters);
  if (filters) params.set("filters", filters);
  if (view.testVariant) params.set("test", view.testVariant);
  if (view.controlVariant) params.set("control", view.controlVariant);
  return params.toString();
}

export function parseView(hash: string): ViewState {
  const view = defaultView();
  const raw = hash.startsWith("#") ? hash.slice(1) : hash;
  const params = new URLSearchParams(raw);
  view.experiment = params.get("experiment");
  view.numerator = params.get("numerator") ?? DEFAULT_NUMERATOR;
  view.measure = params.get("measure") ?? DEFAULT_MEASURE;
  view.filters = parseFilters(params.get("filters") ?? "");
  view.testVariant = params.get("test");
  view.controlVariant = params.get("control");
  return view;
}

/** Canonical /cube query string for a view; doubles as the cache key. */
export function cubeQuery(view: ViewState): string {
  if (!view.experiment) {
    throw new Error("no experiment selected");
  }
  const params = new URLSearchParams();
  params.set("experiment", view.experiment);
  params.set("numerator", view.numerator);
  params.set("measure", view.measure);
  const filters = serializeFilters(view.filters);
  if (filters) params.set("filters", filters);
  if (view.testVariant) params.set("test_variant", view.testVariant);
  if (view.controlVariant) params.set("control_variant", view.controlVariant);
  return params.toString();
}

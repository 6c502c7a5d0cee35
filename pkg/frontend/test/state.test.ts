import { describe, expect, it } from "vitest";

import {
  cubeQuery,
  defaultView,
  parseFilters,
  parseView,
  serializeFilters,
  serializeView,
} from "../src/state.js";

describe("view state URL serialization", () => {
  it("round-trips through the hash fragment", () => {
    const view = {
      experiment: "exp-a",
      numerator: "page_context",
      measure: "clicks",
      filters: { date: "2024-01-05", visitor_newness: "new" },
      testVariant: "test",
      controlVariant: "control",
    };
    const restored = parseView(`#${serializeView(view)}`);
    expect(restored).toEqual(view);
  });

  it("parses an empty hash to the default view", () => {
    expect(parseView("")).toEqual(defaultView());
    expect(parseView("#")).toEqual(defaultView());
  });

  it("filters serialize in sorted, server-shaped form", () => {
    const filters = { visitor_newness: "new", date: "2024-01-05" };
    expect(serializeFilters(filters))
      .toBe("date:2024-01-05,visitor_newness:new");
    expect(parseFilters("date:2024-01-05,visitor_newness:new"))
      .toEqual(filters);
    expect(parseFilters("")).toEqual({});
    expect(parseFilters("junk")).toEqual({});
  });

  it("cubeQuery builds the /cube query string", () => {
    const view = defaultView();
    view.experiment = "exp-a";
    view.filters = { date: "2024-01-05" };
    const query = new URLSearchParams(cubeQuery(view));
    expect(query.get("experiment")).toBe("exp-a");
    expect(query.get("numerator")).toBe("_overall");
    expect(query.get("measure")).toBe("impressions");
    expect(query.get("filters")).toBe("date:2024-01-05");
  });

  it("cubeQuery refuses a view with no experiment", () => {
    expect(() => cubeQuery(defaultView())).toThrow();
  });

  it("identical states produce identical queries (cache-key contract)", () => {
    const a = defaultView();
    a.experiment = "exp-a";
    a.filters = { b: "2", a: "1" };
    const b = defaultView();
    b.experiment = "exp-a";
    b.filters = { a: "1", b: "2" };
    expect(cubeQuery(a)).toBe(cubeQuery(b));
  });
});

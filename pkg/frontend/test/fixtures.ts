/** Recorded backend payloads used across the dashboard tests.
 *
 * CUBE_EXP_A is a verbatim /cube response captured from the API; it
 * covers all three significance states, a hatched small-sample bin,
 * and an undefined bin.
 */

import { CubeResponse, ExperimentsResponse } from "../src/types.js";

export const CUBE_EXP_A: CubeResponse = {
  snapshot: 2,
  experiment_id: "exp-a",
  cube: "page_context",
  measure: "clicks",
  test_variant: "test",
  control_variant: "control",
  filters: {},
  bins: [
    {
      measure: "clicks",
      bin: "course-landing",
      mean_test: 4.0,
      mean_control: 3.0,
      diff_pct: 33.333333333333336,
      t_stat: 0.6123724356957945,
      df: 4.0,
      significant_95: "not-significant",
      small_sample_flag: true,
      n_test: 3,
      n_control: 3,
      undefined: false,
    },
    {
      measure: "clicks",
      bin: "email",
      mean_test: 5.0,
      mean_control: 3.0,
      diff_pct: null,
      t_stat: null,
      df: null,
      significant_95: "not-significant",
      small_sample_flag: true,
      n_test: 1,
      n_control: 3,
      undefined: true,
    },
    {
      measure: "clicks",
      bin: "featured",
      mean_test: 10.0,
      mean_control: 1.0,
      diff_pct: 900.0,
      t_stat: 63.63961030678928,
      df: 198.0,
      significant_95: "positive",
      small_sample_flag: false,
      n_test: 100,
      n_control: 100,
      undefined: false,
    },
    {
      measure: "clicks",
      bin: "search",
      mean_test: 1.0,
      mean_control: 10.0,
      diff_pct: -90.0,
      t_stat: -63.63961030678928,
      df: 198.0,
      significant_95: "negative",
      small_sample_flag: false,
      n_test: 100,
      n_control: 100,
      undefined: false,
    },
  ],
};

export const EXPERIMENTS: ExperimentsResponse = {
  snapshot: 2,
  experiments: [
    {
      experiment_id: "exp-a",
      name: "scored vs baseline",
      salt: "a-salt",
      traffic_fraction: 1.0,
      variants: [
        {
          variant_tag: "control",
          weight: 0.5,
          ranker_mode: "baseline",
          is_control: true,
          score_params: { alpha: 0, beta: 0, gamma: 0, tau: 0, p_min: 1 },
          model_versions: {},
        },
        {
          variant_tag: "test",
          weight: 0.5,
          ranker_mode: "scored",
          is_control: false,
          score_params: { alpha: 0, beta: 0, gamma: 0, tau: 0, p_min: 1 },
          model_versions: {},
        },
      ],
      start_date: "2024-01-01",
      end_date: "2024-01-31",
    },
    {
      experiment_id: "exp-b",
      name: "older experiment",
      salt: "b-salt",
      traffic_fraction: 1.0,
      variants: [
        {
          variant_tag: "old-control",
          weight: 0.5,
          ranker_mode: "baseline",
          is_control: true,
          score_params: { alpha: 0, beta: 0, gamma: 0, tau: 0, p_min: 1 },
          model_versions: {},
        },
        {
          variant_tag: "old-test",
          weight: 0.5,
          ranker_mode: "scored",
          is_control: false,
          score_params: { alpha: 0, beta: 0, gamma: 0, tau: 0, p_min: 1 },
          model_versions: {},
        },
      ],
      start_date: "2023-10-01",
      end_date: "2023-10-21",
    },
  ],
  analytics_meta: {
    "exp-a": {
      cubes: ["_overall", "course.subcategory_id", "page_context"],
      measures: ["impressions", "clicks", "enrollments", "revenue",
                 "minutes_consumed", "nps_responses", "nps_score_sum",
                 "nps"],
      filter_dims: ["visitor_newness"],
    },
    "exp-b": {
      cubes: ["_overall"],
      measures: ["impressions", "clicks", "enrollments", "revenue",
                 "minutes_consumed", "nps_responses", "nps_score_sum",
                 "nps"],
      filter_dims: ["visitor_newness"],
    },
  },
};

/** A second experiment's overall cube, shaped like the backend's. */
export function cubeForExpB(measure: string): CubeResponse {
  return {
    snapshot: 2,
    experiment_id: "exp-b",
    cube: "_overall",
    measure,
    test_variant: "old-test",
    control_variant: "old-control",
    filters: {},
    bins: [
      {
        measure,
        bin: "(all)",
        mean_test: 2.5,
        mean_control: 2.0,
        diff_pct: 25.0,
        t_stat: 3.2,
        df: 500.0,
        significant_95: "positive",
        small_sample_flag: false,
        n_test: 400,
        n_control: 420,
        undefined: false,
      },
    ],
  };
}

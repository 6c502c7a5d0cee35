/** Wire types mirroring the backend's documented JSON contracts. */

export type Significance = "positive" | "negative" | "not-significant";

export interface DifferentialRow {
  measure: string;
  bin: string;
  mean_test: number | null;
  mean_control: number | null;
  diff_pct: number | null;
  t_stat: number | null;
  df: number | null;
  significant_95: Significance;
  small_sample_flag: boolean;
  n_test: number;
  n_control: number;
  undefined: boolean;
}

export interface CubeResponse {
  snapshot: number;
  experiment_id: string;
  cube: string;
  measure: string;
  test_variant: string;
  control_variant: string;
  filters: Record<string, string>;
  bins: DifferentialRow[];
}

export interface VariantConfig {
  variant_tag: string;
  weight: number;
  ranker_mode: string;
  is_control: boolean;
  score_params: Record<string, number>;
  model_versions: Record<string, number>;
}

export interface ExperimentConfig {
  experiment_id: string;
  name: string;
  salt: string;
  traffic_fraction: number;
  variants: VariantConfig[];
  start_date: string;
  end_date: string;
}

export interface AnalyticsMeta {
  cubes: string[];
  measures: string[];
  filter_dims: string[];
}

export interface ExperimentsResponse {
  snapshot: number;
  experiments: ExperimentConfig[];
  analytics_meta: Record<string, AnalyticsMeta>;
}

export interface RuntimeConfig {
  apiBaseUrl: string;
}

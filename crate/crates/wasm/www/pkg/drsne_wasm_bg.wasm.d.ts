/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_anomaly_flags: (a: number) => [number, number];
export const demo_coordinates: (a: number) => [number, number];
export const demo_density_correlation: (a: number) => [number, number, number];
export const demo_iteration: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const demo_score_anomalies: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_scores: (a: number) => [number, number];
export const demo_set_lambda: (a: number, b: number) => [number, number];
export const demo_source_log_density: (a: number) => [number, number];
export const demo_step: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;

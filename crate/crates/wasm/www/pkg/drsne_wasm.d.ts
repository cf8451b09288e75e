/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    anomaly_flags(): Uint8Array;
    /**
     * Row-major 2-D coordinates.
     */
    coordinates(): Float64Array;
    /**
     * Pearson correlation of log densities between source and embedding.
     */
    density_correlation(): number;
    iteration(): number;
    /**
     * Spiral of `n` points with density amplitude `amplitude`, embedded
     * with weight `lambda`.
     */
    constructor(n: number, amplitude: number, lambda: number, seed: bigint);
    /**
     * Scores the current embedding with `detector` (knn, lof, iforest or
     * centroid) and returns the AUPRC against the low-density flags.
     * The per-point scores are available from [`Demo::scores`].
     */
    score_anomalies(detector: string, k: number): number;
    scores(): Float64Array;
    set_lambda(lambda: number): void;
    /**
     * Normalized log density of each point in the source space.
     */
    source_log_density(): Float64Array;
    /**
     * Runs up to `count` iterations; returns true once the schedule is done.
     */
    step(count: number): boolean;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_anomaly_flags: (a: number) => [number, number];
    readonly demo_coordinates: (a: number) => [number, number];
    readonly demo_density_correlation: (a: number) => [number, number, number];
    readonly demo_iteration: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_score_anomalies: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_scores: (a: number) => [number, number];
    readonly demo_set_lambda: (a: number, b: number) => [number, number];
    readonly demo_source_log_density: (a: number) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;

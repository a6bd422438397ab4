/* tslint:disable */
/* eslint-disable */

export class PhantomDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Gland DSC before registration.
     */
    baseline_dsc(): number;
    /**
     * Gland DSC under the current field.
     */
    dsc(): number;
    extent(): number;
    iterations(): number;
    /**
     * Generates a 32³ phantom pair.
     */
    constructor(seed: number, deform_magnitude: number);
    /**
     * Runs `steps` Adam updates of the dense field on the total loss and
     * returns the loss before the last update.
     */
    register(steps: number, lr: number, alpha: number): number;
    /**
     * Discards the current field and optimizer state.
     */
    reset(): void;
    /**
     * RGBA pixels of axial slice `z` (row-major, x fastest) for one of the
     * views `moving`, `fixed`, `warped` or `difference`. The gland outline of
     * the fixed label is drawn in red and the warped moving label in green.
     */
    slice_rgba(view: string, z: number): Uint8Array;
    /**
     * Landmark TRE in millimetres under the current field.
     */
    tre_mm(): number;
    /**
     * Replaces the current field with the generator's ground truth.
     */
    use_ground_truth(): void;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_phantomdemo_free: (a: number, b: number) => void;
    readonly phantomdemo_baseline_dsc: (a: number) => [number, number, number];
    readonly phantomdemo_dsc: (a: number) => [number, number, number];
    readonly phantomdemo_extent: (a: number) => number;
    readonly phantomdemo_iterations: (a: number) => number;
    readonly phantomdemo_new: (a: number, b: number) => [number, number, number];
    readonly phantomdemo_register: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly phantomdemo_reset: (a: number) => void;
    readonly phantomdemo_slice_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly phantomdemo_tre_mm: (a: number) => [number, number, number];
    readonly phantomdemo_use_ground_truth: (a: number) => void;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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

/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_phantomdemo_free: (a: number, b: number) => void;
export const phantomdemo_baseline_dsc: (a: number) => [number, number, number];
export const phantomdemo_dsc: (a: number) => [number, number, number];
export const phantomdemo_extent: (a: number) => number;
export const phantomdemo_iterations: (a: number) => number;
export const phantomdemo_new: (a: number, b: number) => [number, number, number];
export const phantomdemo_register: (a: number, b: number, c: number, d: number) => [number, number, number];
export const phantomdemo_reset: (a: number) => void;
export const phantomdemo_slice_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const phantomdemo_tre_mm: (a: number) => [number, number, number];
export const phantomdemo_use_ground_truth: (a: number) => void;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

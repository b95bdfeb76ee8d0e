/**
 * Schema-driven form generation: one input control per parameter descriptor,
 * its kind decides the control type, and the description always renders
 * beside the control. A plugin registered server-side shows up here with no
 * UI changes.
 */

import { ParamDescriptor, PluginDescriptor } from "./api.js";

export interface FieldState {
  param: ParamDescriptor;
  raw: string;
  error: string | null;
}

export interface FormModel {
  descriptor: PluginDescriptor;
  fields: Map<string, FieldState>;
}

function defaultRaw(param: ParamDescriptor): string {
  const value = param.default;
  if (value === null || value === undefined) {
    return "";
  }
  if (param.kind === "bool") {
    return value ? "true" : "false";
  }
  if (param.kind === "int_list") {
    return (value as number[]).join(",");
  }
  return String(value);
}

export function createFormModel(descriptor: PluginDescriptor): FormModel {
  const fields = new Map<string, FieldState>();
  for (const param of descriptor.params) {
    fields.set(param.name, { param, raw: defaultRaw(param), error: null });
  }
  return { descriptor, fields };
}

/** Parse + range-check one raw control value; mirrors the server's schema rules. */
export function parseValue(param: ParamDescriptor, raw: string): { value?: unknown; error?: string } {
  const trimmed = raw.trim();
  switch (param.kind) {
    case "int": {
      if (!/^-?\d+$/.test(trimmed)) {
        return { error: "must be an integer" };
      }
      const value = parseInt(trimmed, 10);
      return checkRange(param, value);
    }
    case "float": {
      const value = Number(trimmed);
      if (trimmed === "" || Number.isNaN(value) || !Number.isFinite(value)) {
        return { error: "must be a number" };
      }
      return checkRange(param, value);
    }
    case "bool":
      if (trimmed === "true" || trimmed === "false") {
        return { value: trimmed === "true" };
      }
      return { error: "must be true or false" };
    case "enum": {
      const allowed = (param.range ?? []).map(String);
      if (!allowed.includes(trimmed)) {
        return { error: `must be one of ${allowed.join(", ")}` };
      }
      return { value: trimmed };
    }
    case "int_list": {
      const parts = trimmed.split(",").map((p) => p.trim()).filter((p) => p.length > 0);
      if (parts.length === 0) {
        return { error: "must list at least one integer" };
      }
      const values: number[] = [];
      for (const part of parts) {
        if (!/^-?\d+$/.test(part)) {
          return { error: "must be comma-separated integers" };
        }
        const value = parseInt(part, 10);
        const checked = checkRange(param, value);
        if (checked.error) {
          return { error: `element ${checked.error}` };
        }
        values.push(value);
      }
      return { value: values };
    }
    default:
      return { value: raw };
  }
}

function checkRange(param: ParamDescriptor, value: number): { value?: unknown; error?: string } {
  if (param.range && param.range.length === 2) {
    const [low, high] = param.range;
    if (low !== null && typeof low === "number" && value < low) {
      return { error: `must be >= ${low}` };
    }
    if (high !== null && typeof high === "number" && value > high) {
      return { error: `must be <= ${high}` };
    }
  }
  return { value };
}

/** Validate every field; returns typed params or null when any field errs. */
export function validateForm(model: FormModel): Record<string, unknown> | null {
  const values: Record<string, unknown> = {};
  let valid = true;
  for (const field of model.fields.values()) {
    const parsed = parseValue(field.param, field.raw);
    if (parsed.error) {
      field.error = parsed.error;
      valid = false;
    } else {
      field.error = null;
      values[field.param.name] = parsed.value;
    }
  }
  return valid ? values : null;
}

export function setFieldErrors(model: FormModel, details: Array<[string, string]>): void {
  for (const [name, reason] of details) {
    const field = model.fields.get(name);
    if (field) {
      field.error = reason;
    }
  }
}

function controlFor(field: FieldState, onChange: () => void): HTMLElement {
  const param = field.param;
  if (param.kind === "bool") {
    const input = document.createElement("input");
    input.type = "checkbox";
    input.checked = field.raw === "true";
    input.addEventListener("change", () => {
      field.raw = input.checked ? "true" : "false";
      onChange();
    });
    return input;
  }
  if (param.kind === "enum") {
    const select = document.createElement("select");
    for (const option of (param.range ?? []).map(String)) {
      const element = document.createElement("option");
      element.value = option;
      element.textContent = option;
      element.selected = option === field.raw;
      select.append(element);
    }
    select.addEventListener("change", () => {
      field.raw = select.value;
      onChange();
    });
    return select;
  }
  const input = document.createElement("input");
  if (param.kind === "int" || param.kind === "float") {
    input.type = "number";
    if (param.kind === "float") {
      input.step = "any";
    }
    if (param.range && typeof param.range[0] === "number") {
      input.min = String(param.range[0]);
    }
    if (param.range && typeof param.range[1] === "number") {
      input.max = String(param.range[1]);
    }
  } else {
    input.type = "text";
    if (param.kind === "int_list") {
      input.classList.add("token-field");
      input.placeholder = "comma-separated integers";
    }
  }
  input.value = field.raw;
  input.addEventListener("input", () => {
    field.raw = input.value;
    onChange();
  });
  return input;
}

/**
 * Render the form: exactly one labeled control per descriptor parameter,
 * each with its description and an (initially empty) error slot.
 */
export function renderForm(model: FormModel, onChange: () => void = () => {}): HTMLElement {
  const form = document.createElement("div");
  form.className = "plugin-form";
  form.dataset.plugin = model.descriptor.plugin_id;
  for (const field of model.fields.values()) {
    const row = document.createElement("div");
    row.className = "form-row";
    row.dataset.param = field.param.name;

    const label = document.createElement("label");
    label.textContent = field.param.name;
    row.append(label);

    const control = controlFor(field, () => {
      renderError(row, field);
      onChange();
    });
    control.classList.add("param-control");
    row.append(control);

    const description = document.createElement("small");
    description.className = "param-description";
    description.textContent = field.param.description;
    row.append(description);

    const error = document.createElement("span");
    error.className = "field-error";
    row.append(error);
    renderError(row, field);

    form.append(row);
  }
  return form;
}

function renderError(row: HTMLElement, field: FieldState): void {
  const slot = row.querySelector(".field-error");
  if (slot) {
    slot.textContent = field.error ?? "";
  }
}

/** Re-paint every error slot from the model (after server-side validation). */
export function refreshErrors(form: HTMLElement, model: FormModel): void {
  for (const field of model.fields.values()) {
    const row = form.querySelector<HTMLElement>(`[data-param="${field.param.name}"]`);
    if (row) {
      renderError(row, field);
    }
  }
}

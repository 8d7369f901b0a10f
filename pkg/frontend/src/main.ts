import { RegistryApi } from "./api.js";
import { App } from "./app.js";

// served by the registry itself, so the API lives at the same origin
const root = document.getElementById("app");
if (root) {
  new App(root, new RegistryApi("")).start();
}

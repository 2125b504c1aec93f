import { ProbeApi } from "./api.js";
import { ProbeController } from "./controller.js";
import { Page } from "./render.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

let page: Page | null = null;
const controller = new ProbeController(new ProbeApi(), (state) => {
  page?.render(state);
});
page = new Page(root, controller);
page.render(controller.snapshot());
void controller.init();

// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "seqsplat/util.hpp"

namespace seqsplat::datagen {

using json = nlohmann::json;

namespace {

enum class Shape { Box, Cylinder, Ellipsoid };

struct GeomPiece {
    Shape shape;
    Eigen::Vector3d center;
    Eigen::Vector3d extents;  // half extents; cylinder: (radius, radius, half height)
};

struct PartDef {
    std::string name;
    std::string affordance;  // empty = filler geometry, no mask
    Eigen::Vector3d rgb;
    size_t count;
    std::vector<GeomPiece> pieces;
};

struct TemplateDef {
    std::string category;
    std::vector<PartDef> parts;
};

GeomPiece box(double cx, double cy, double cz, double ex, double ey, double ez) {
    return {Shape::Box, {cx, cy, cz}, {ex, ey, ez}};
}
GeomPiece cyl(double cx, double cy, double cz, double r, double hh) {
    return {Shape::Cylinder, {cx, cy, cz}, {r, r, hh}};
}
GeomPiece ell(double cx, double cy, double cz, double ex, double ey, double ez) {
    return {Shape::Ellipsoid, {cx, cy, cz}, {ex, ey, ez}};
}

// Objects live in a local frame resting on z=0 with roughly unit footprint.
const std::vector<TemplateDef>& template_defs() {
    static const std::vector<TemplateDef> defs = {
        {"microwave",
         {{"body", "", {0.62, 0.62, 0.65}, 170, {box(0, 0, 0.25, 0.40, 0.26, 0.25)}},
          {"door", "open", {0.25, 0.25, 0.28}, 60, {box(-0.10, 0.275, 0.25, 0.26, 0.015, 0.21)}},
          {"handle", "pull", {0.80, 0.80, 0.82}, 24, {box(0.19, 0.295, 0.25, 0.015, 0.012, 0.18)}},
          {"keypad", "press", {0.12, 0.12, 0.12}, 40, {box(0.33, 0.275, 0.30, 0.055, 0.012, 0.15)}}}},
        {"bowl",
         {{"outer", "wrap_grasp", {0.92, 0.90, 0.85}, 140, {ell(0, 0, 0.12, 0.22, 0.22, 0.12)}},
          {"cavity", "contain", {0.75, 0.73, 0.70}, 70, {cyl(0, 0, 0.20, 0.15, 0.015)}}}},
        {"bottle",
         {{"body", "grasp", {0.25, 0.55, 0.30}, 120, {cyl(0, 0, 0.18, 0.07, 0.18)}},
          {"neck", "pour", {0.30, 0.60, 0.35}, 40, {cyl(0, 0, 0.42, 0.032, 0.05)}},
          {"cap", "open", {0.85, 0.30, 0.25}, 40, {cyl(0, 0, 0.50, 0.036, 0.025)}}}},
        {"door",
         {{"board", "push", {0.55, 0.38, 0.25}, 200, {box(0, 0, 0.95, 0.45, 0.03, 0.95)}},
          {"handle", "pull", {0.85, 0.72, 0.35}, 30, {box(0.35, 0.06, 0.95, 0.06, 0.03, 0.025)}}}},
        {"laptop",
         {{"base", "", {0.45, 0.45, 0.48}, 80, {box(0, 0, 0.02, 0.30, 0.22, 0.02)}},
          {"keyboard", "press", {0.18, 0.18, 0.20}, 70, {box(0, -0.03, 0.05, 0.26, 0.15, 0.008)}},
          {"screen", "display", {0.08, 0.09, 0.12}, 90, {box(0, 0.21, 0.24, 0.29, 0.012, 0.19)}},
          {"lid_edge", "open", {0.50, 0.50, 0.52}, 30, {box(0, 0.215, 0.44, 0.29, 0.02, 0.015)}}}},
        {"faucet",
         {{"pipe", "", {0.75, 0.75, 0.78}, 100, {cyl(0, 0, 0.15, 0.03, 0.15)}},
          {"spout", "pour", {0.78, 0.78, 0.80}, 70, {box(0.12, 0, 0.31, 0.12, 0.03, 0.02)}},
          {"lever", "open", {0.82, 0.25, 0.20}, 40, {box(-0.03, 0, 0.345, 0.05, 0.02, 0.015)}}}},
        {"mug",
         {{"body", "wrap_grasp", {0.20, 0.35, 0.70}, 120, {cyl(0, 0, 0.12, 0.10, 0.12)}},
          {"cavity", "contain", {0.15, 0.15, 0.18}, 40, {cyl(0, 0, 0.225, 0.08, 0.012)}},
          {"handle", "grasp", {0.22, 0.38, 0.72}, 45, {box(0.13, 0, 0.12, 0.025, 0.02, 0.08)}}}},
        {"refrigerator",
         {{"body", "", {0.88, 0.88, 0.90}, 150, {box(0, 0, 0.90, 0.40, 0.33, 0.90)}},
          {"fridge_door", "open", {0.90, 0.90, 0.92}, 90, {box(-0.02, 0.35, 1.15, 0.37, 0.018, 0.55)}},
          {"handle", "pull", {0.70, 0.70, 0.72}, 30, {box(0.30, 0.38, 1.15, 0.018, 0.018, 0.30)}},
          {"shelf", "contain", {0.80, 0.82, 0.85}, 50, {box(0, 0, 0.50, 0.34, 0.28, 0.018)}}}},
        {"trashcan",
         {{"body", "", {0.45, 0.47, 0.48}, 130, {cyl(0, 0, 0.30, 0.18, 0.30)}},
          {"lid", "open", {0.40, 0.42, 0.43}, 60, {cyl(0, 0, 0.62, 0.19, 0.015)}},
          {"pedal", "press", {0.15, 0.15, 0.15}, 30, {box(0.21, 0, 0.03, 0.05, 0.04, 0.018)}},
          {"cavity", "contain", {0.10, 0.10, 0.10}, 40, {cyl(0, 0, 0.55, 0.14, 0.02)}}}},
        {"display",
         {{"screen", "display", {0.06, 0.07, 0.10}, 150, {box(0, 0, 0.45, 0.35, 0.018, 0.22)}},
          {"stand", "move", {0.35, 0.35, 0.38}, 50, {box(0, 0, 0.10, 0.05, 0.05, 0.10)}},
          {"base", "", {0.30, 0.30, 0.32}, 40, {box(0, 0, 0.012, 0.14, 0.10, 0.012)}}}},
        {"knife",
         {{"handle", "grasp", {0.15, 0.12, 0.10}, 80, {box(-0.15, 0, 0.03, 0.09, 0.016, 0.025)}},
          {"blade", "cut", {0.80, 0.80, 0.83}, 110, {box(0.12, 0, 0.03, 0.17, 0.004, 0.02)}},
          {"tip", "stab", {0.85, 0.85, 0.88}, 30, {ell(0.31, 0, 0.03, 0.03, 0.004, 0.014)}}}},
        {"table",
         {{"top", "support", {0.58, 0.44, 0.28}, 160, {box(0, 0, 0.72, 0.60, 0.40, 0.025)}},
          {"edge", "move", {0.55, 0.40, 0.25}, 40, {box(0, -0.42, 0.72, 0.60, 0.018, 0.025)}},
          {"legs", "", {0.50, 0.38, 0.24}, 80,
           {cyl(0.54, 0.34, 0.35, 0.03, 0.35), cyl(-0.54, 0.34, 0.35, 0.03, 0.35),
            cyl(0.54, -0.34, 0.35, 0.03, 0.35), cyl(-0.54, -0.34, 0.35, 0.03, 0.35)}}}},
        {"bed",
         {{"mattress", "lay", {0.90, 0.90, 0.94}, 180, {box(0, 0, 0.35, 0.80, 0.50, 0.08)}},
          {"frame", "support", {0.42, 0.30, 0.20}, 100, {box(0, 0, 0.22, 0.85, 0.55, 0.05)}}}},
        {"earphone",
         {{"band", "wear", {0.15, 0.15, 0.17}, 90,
           {box(0, 0, 0.58, 0.10, 0.015, 0.015), box(-0.115, 0, 0.52, 0.015, 0.015, 0.055),
            box(0.115, 0, 0.52, 0.015, 0.015, 0.055)}},
          {"buds", "listen", {0.20, 0.20, 0.24}, 90,
           {ell(-0.115, 0, 0.445, 0.035, 0.035, 0.045), ell(0.115, 0, 0.445, 0.035, 0.035, 0.045)}},
          {"stand", "", {0.55, 0.55, 0.58}, 40, {cyl(0, 0, 0.20, 0.04, 0.20)}}}},
        {"keyboard",
         {{"keys", "press", {0.16, 0.16, 0.18}, 160, {box(0, 0, 0.035, 0.30, 0.115, 0.012)}},
          {"body", "move", {0.40, 0.40, 0.42}, 80, {box(0, 0, 0.014, 0.32, 0.14, 0.012)}}}},
        {"hat",
         {{"crown", "wear", {0.60, 0.20, 0.18}, 130, {ell(0, 0, 0.12, 0.16, 0.16, 0.10)}},
          {"brim", "grasp", {0.55, 0.18, 0.16}, 90, {cyl(0, 0, 0.03, 0.26, 0.01)}}}},
        {"bag",
         {{"pouch", "contain", {0.48, 0.32, 0.20}, 150, {box(0, 0, 0.25, 0.25, 0.12, 0.25)}},
          {"strap", "lift", {0.42, 0.28, 0.18}, 60,
           {box(0, 0, 0.58, 0.18, 0.018, 0.018), box(-0.19, 0, 0.54, 0.018, 0.018, 0.04),
            box(0.19, 0, 0.54, 0.018, 0.018, 0.04)}},
          {"zipper", "open", {0.78, 0.78, 0.80}, 40, {box(0, 0, 0.505, 0.22, 0.014, 0.010)}}}},
        {"vase",
         {{"body", "wrap_grasp", {0.22, 0.52, 0.50}, 170, {ell(0, 0, 0.25, 0.15, 0.15, 0.25)}},
          {"cavity", "contain", {0.12, 0.30, 0.28}, 50, {cyl(0, 0, 0.50, 0.07, 0.015)}}}},
        {"dishwasher",
         {{"body", "", {0.72, 0.72, 0.75}, 150, {box(0, 0, 0.45, 0.45, 0.33, 0.45)}},
          {"dw_door", "open", {0.75, 0.75, 0.78}, 100, {box(0, 0.35, 0.45, 0.43, 0.018, 0.42)}},
          {"rack", "contain", {0.55, 0.55, 0.58}, 50, {box(0, 0, 0.35, 0.38, 0.28, 0.025)}},
          {"button", "press", {0.10, 0.10, 0.10}, 25, {box(0.35, 0.36, 0.86, 0.05, 0.015, 0.018)}}}},
        {"chair",
         {{"seat", "sit", {0.58, 0.42, 0.26}, 110, {box(0, 0, 0.45, 0.25, 0.25, 0.028)}},
          {"back", "support", {0.55, 0.40, 0.24}, 90, {box(0, -0.235, 0.80, 0.25, 0.022, 0.30)}},
          {"legs", "", {0.50, 0.36, 0.22}, 80,
           {cyl(0.20, 0.20, 0.21, 0.022, 0.21), cyl(-0.20, 0.20, 0.21, 0.022, 0.21),
            cyl(0.20, -0.20, 0.21, 0.022, 0.21), cyl(-0.20, -0.20, 0.21, 0.022, 0.21)}}}},
        {"scissors",
         {{"handles", "grasp", {0.80, 0.22, 0.20}, 100,
           {ell(-0.13, 0.04, 0.02, 0.05, 0.03, 0.012), ell(-0.13, -0.04, 0.02, 0.05, 0.03, 0.012)}},
          {"blades", "cut", {0.78, 0.78, 0.82}, 110,
           {box(0.08, 0.012, 0.02, 0.12, 0.008, 0.006), box(0.08, -0.012, 0.02, 0.12, 0.008, 0.006)}}}},
    };
    return defs;
}

const std::map<std::string, std::vector<std::string>>& slot_fillers() {
    static const std::map<std::string, std::vector<std::string>> slots = {
        {"{food}", {"soup", "rice", "noodles", "stew"}},
        {"{drink}", {"water", "juice", "milk", "tea"}},
        {"{thing}", {"keys", "wallet", "phone", "charger"}},
    };
    return slots;
}

std::string fill_slots(std::string text,
                       const std::map<std::string, std::string>& fills) {
    for (const auto& [slot, word] : fills) {
        size_t pos;
        while ((pos = text.find(slot)) != std::string::npos)
            text.replace(pos, slot.size(), word);
    }
    return text;
}

struct ObjectInstance {
    size_t template_index;
    scene::RigidScaleTransform transform;
    scene::GaussianScene scn;
    std::vector<scene::AffordanceMask> masks;  // local, per affordance part
    Eigen::AlignedBox3d world_box;
};

Eigen::AlignedBox3d world_bounds(const scene::GaussianScene& local,
                                 const scene::RigidScaleTransform& t) {
    Eigen::AlignedBox3d box;
    for (const auto& g : local.primitives) {
        Eigen::Vector3d p = t.apply_point(g.position);
        double pad = 3.0 * t.uniform_scale * g.scale.maxCoeff();
        box.extend(p + Eigen::Vector3d::Constant(pad));
        box.extend(p - Eigen::Vector3d::Constant(pad));
    }
    return box;
}

bool overlaps_xy(const Eigen::AlignedBox3d& a, const Eigen::AlignedBox3d& b,
                 double margin) {
    return a.min().x() - margin < b.max().x() && b.min().x() - margin < a.max().x() &&
           a.min().y() - margin < b.max().y() && b.min().y() - margin < a.max().y();
}

}  // namespace

const std::vector<std::string>& object_categories() {
    static const std::vector<std::string> cats = [] {
        std::vector<std::string> v;
        for (const auto& def : template_defs())
            v.push_back(def.category);
        return v;
    }();
    return cats;
}

const std::vector<std::string>& affordance_types() {
    static const std::vector<std::string> types = {
        "grasp", "contain", "lift", "open", "lay",    "sit",   "support", "wrap_grasp",
        "pour",  "move",    "display", "push", "pull", "listen", "wear",  "press",
        "cut",   "stab"};
    return types;
}

const std::vector<ObjectTemplate>& default_templates() {
    static const std::vector<ObjectTemplate> templates = [] {
        std::vector<ObjectTemplate> out;
        for (const auto& def : template_defs()) {
            ObjectTemplate t;
            t.name = def.category;
            t.category = def.category;
            size_t offset = 0;
            for (const auto& part : def.parts) {
                if (!part.affordance.empty())
                    t.parts.push_back({part.name, part.affordance, offset,
                                       offset + part.count});
                offset += part.count;
            }
            t.primitive_count = offset;
            out.push_back(std::move(t));
        }
        return out;
    }();
    return templates;
}

const std::vector<InstructionRule>& default_rules() {
    auto step = [](const char* cat, const char* aff, const char* text) {
        return StepSpec{cat, aff, text};
    };
    static const std::vector<InstructionRule> rules = {
        {"heat_food",
         "heat the {food} in the microwave",
         {step("microwave", "open", "open the microwave door"),
          step("bowl", "wrap_grasp", "place the bowl of {food} inside"),
          step("microwave", "press", "press the start button")}},
        {"reheat_and_close",
         "warm up the {food} and close the door",
         {step("microwave", "open", "open the microwave door"),
          step("bowl", "wrap_grasp", "place the bowl of {food} inside"),
          step("microwave", "press", "press the start button"),
          step("microwave", "pull", "pull the door shut by its handle")}},
        {"store_leftovers",
         "store the {food} in the refrigerator",
         {step("refrigerator", "pull", "pull the refrigerator handle"),
          step("bowl", "wrap_grasp", "hold the bowl of {food}"),
          step("refrigerator", "contain", "set it on the fridge shelf"),
          step("refrigerator", "open", "swing the fridge door closed")}},
        {"chill_drink",
         "chill the {drink} for later",
         {step("refrigerator", "pull", "pull the refrigerator handle"),
          step("bottle", "grasp", "grasp the {drink} bottle"),
          step("refrigerator", "contain", "set it on the fridge shelf")}},
        {"pour_drink",
         "pour a glass of {drink}",
         {step("bottle", "grasp", "grasp the {drink} bottle"),
          step("bottle", "open", "twist off the bottle cap"),
          step("bottle", "pour", "pour from the bottle neck")}},
        {"fill_mug",
         "fill the mug at the faucet",
         {step("mug", "grasp", "grasp the mug handle"),
          step("faucet", "open", "turn the faucet lever"),
          step("faucet", "pour", "let water run from the spout"),
          step("mug", "contain", "fill the mug")}},
        {"run_dishwasher",
         "run the dishwasher after dinner",
         {step("dishwasher", "open", "open the dishwasher door"),
          step("bowl", "wrap_grasp", "pick up the dirty bowl"),
          step("dishwasher", "contain", "slide it into the rack"),
          step("dishwasher", "press", "press the wash button")}},
        {"trash_scraps",
         "throw the scraps away",
         {step("trashcan", "press", "step on the trashcan pedal"),
          step("trashcan", "open", "let the lid swing up"),
          step("trashcan", "contain", "drop the scraps in")}},
        {"watch_video",
         "watch a video on the laptop",
         {step("laptop", "open", "lift the laptop lid"),
          step("laptop", "press", "press the power key"),
          step("laptop", "display", "watch the laptop screen")}},
        {"type_note",
         "type a note on the keyboard",
         {step("keyboard", "move", "slide the keyboard closer"),
          step("keyboard", "press", "press the keyboard keys")}},
        {"leave_room",
         "leave the room through the door",
         {step("door", "pull", "pull the door handle"),
          step("door", "push", "push the door open")}},
        {"set_table",
         "set the table for lunch",
         {step("table", "move", "clear the table edge"),
          step("bowl", "wrap_grasp", "carry the bowl over"),
          step("table", "support", "rest it on the tabletop")}},
        {"nap_time",
         "take a short nap",
         {step("bed", "support", "sit on the bed frame"),
          step("bed", "lay", "lie on the mattress")}},
        {"music_break",
         "listen to music for a while",
         {step("earphone", "wear", "put the earphone band on"),
          step("earphone", "listen", "listen through the earphone buds")}},
        {"cut_fruit",
         "slice some fruit",
         {step("knife", "grasp", "grasp the knife handle"),
          step("knife", "cut", "slice with the knife blade")}},
        {"open_package",
         "open the sealed package",
         {step("scissors", "grasp", "pick up the scissors"),
          step("scissors", "cut", "cut with the scissors")}},
        {"pack_bag",
         "pack the bag with your {thing}",
         {step("bag", "open", "unzip the bag"),
          step("bag", "contain", "put the {thing} inside"),
          step("bag", "lift", "lift the bag by the strap")}},
        {"dress_up",
         "get ready to go outside",
         {step("hat", "grasp", "pick the hat up by the brim"),
          step("hat", "wear", "put the hat on")}},
        {"show_photos",
         "show the photos on the monitor",
         {step("display", "move", "angle the monitor"),
          step("display", "display", "view the screen")}},
        {"fresh_flowers",
         "put fresh water in the vase",
         {step("faucet", "open", "turn the faucet lever"),
          step("vase", "wrap_grasp", "hold the vase body"),
          step("vase", "contain", "fill the vase")}},
        {"sit_down",
         "sit down at the table",
         {step("table", "move", "clear the table edge"),
          step("chair", "sit", "sit on the chair seat")}},
        {"pin_note",
         "pin the note down",
         {step("knife", "grasp", "grasp the knife handle"),
          step("knife", "stab", "press the knife tip through")}},
        {"dinner_routine",
         "prepare dinner and clean up",
         {step("microwave", "open", "open the microwave door"),
          step("bowl", "wrap_grasp", "place the bowl of {food} inside"),
          step("microwave", "press", "press the start button"),
          step("trashcan", "press", "step on the trashcan pedal"),
          step("trashcan", "contain", "drop the scraps in"),
          step("dishwasher", "open", "open the dishwasher door"),
          step("dishwasher", "contain", "slide it into the rack"),
          step("dishwasher", "press", "press the wash button")}},
        {"morning_start",
         "start the morning",
         {step("faucet", "open", "turn the faucet lever"),
          step("mug", "contain", "fill the mug"),
          step("laptop", "open", "lift the laptop lid"),
          step("laptop", "press", "press the power key")}},
        {"tidy_desk",
         "tidy up the desk",
         {step("keyboard", "move", "slide the keyboard closer"),
          step("display", "move", "angle the monitor"),
          step("bag", "open", "unzip the bag"),
          step("bag", "contain", "put the {thing} inside")}},
        // single-step rules: the instruction names the atomic action directly
        {"s_open_microwave", "open the microwave door",
         {step("microwave", "open", "open the microwave door")}},
        {"s_press_start", "press the start button",
         {step("microwave", "press", "press the start button")}},
        {"s_pull_handle", "pull the door handle",
         {step("door", "pull", "pull the door handle")}},
        {"s_push_door", "push the door open",
         {step("door", "push", "push the door open")}},
        {"s_open_bottle", "twist off the bottle cap",
         {step("bottle", "open", "twist off the bottle cap")}},
        {"s_pour_bottle", "pour from the bottle neck",
         {step("bottle", "pour", "pour from the bottle neck")}},
        {"s_grasp_mug", "grasp the mug handle",
         {step("mug", "grasp", "grasp the mug handle")}},
        {"s_open_fridge", "pull the refrigerator handle",
         {step("refrigerator", "pull", "pull the refrigerator handle")}},
        {"s_fridge_shelf", "set it on the fridge shelf",
         {step("refrigerator", "contain", "set it on the fridge shelf")}},
        {"s_pedal", "step on the trashcan pedal",
         {step("trashcan", "press", "step on the trashcan pedal")}},
        {"s_lid", "let the lid swing up",
         {step("trashcan", "open", "let the lid swing up")}},
        {"s_lift_lid", "lift the laptop lid",
         {step("laptop", "open", "lift the laptop lid")}},
        {"s_screen", "watch the laptop screen",
         {step("laptop", "display", "watch the laptop screen")}},
        {"s_keys", "press the keyboard keys",
         {step("keyboard", "press", "press the keyboard keys")}},
        {"s_sit", "sit on the chair seat", {step("chair", "sit", "sit on the chair seat")}},
        {"s_lay", "lie on the mattress", {step("bed", "lay", "lie on the mattress")}},
        {"s_wear_hat", "put the hat on", {step("hat", "wear", "put the hat on")}},
        {"s_buds", "listen through the earphone buds",
         {step("earphone", "listen", "listen through the earphone buds")}},
        {"s_cut", "slice with the knife blade",
         {step("knife", "cut", "slice with the knife blade")}},
        {"s_stab", "press the knife tip through",
         {step("knife", "stab", "press the knife tip through")}},
        {"s_snip", "cut with the scissors",
         {step("scissors", "cut", "cut with the scissors")}},
        {"s_zip", "unzip the bag", {step("bag", "open", "unzip the bag")}},
        {"s_lift_bag", "lift the bag by the strap",
         {step("bag", "lift", "lift the bag by the strap")}},
        {"s_faucet", "turn the faucet lever",
         {step("faucet", "open", "turn the faucet lever")}},
        {"s_spout", "let water run from the spout",
         {step("faucet", "pour", "let water run from the spout")}},
        {"s_table", "rest it on the tabletop",
         {step("table", "support", "rest it on the tabletop")}},
        {"s_vase", "fill the vase", {step("vase", "contain", "fill the vase")}},
    };
    return rules;
}

std::pair<scene::GaussianScene, std::vector<scene::AffordanceMask>> generate_object(
    const ObjectTemplate& tmpl, uint64_t seed) {
    const TemplateDef* def = nullptr;
    for (const auto& d : template_defs())
        if (d.category == tmpl.category) {
            def = &d;
            break;
        }
    if (!def)
        throw std::runtime_error("generate_object: unknown category '" + tmpl.category +
                                 "'");
    RngStream rng(hash_combine(seed, fnv1a(tmpl.name)), "object");
    scene::GaussianScene scn;
    scn.primitives.reserve(tmpl.primitive_count);
    for (const auto& part : def->parts) {
        for (size_t k = 0; k < part.count; ++k) {
            const GeomPiece& piece = part.pieces[k % part.pieces.size()];
            Eigen::Vector3d local;
            switch (piece.shape) {
                case Shape::Box:
                    local = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
                    break;
                case Shape::Cylinder: {
                    double r = std::sqrt(rng.uniform());
                    double th = rng.uniform(0, 2 * M_PI);
                    local = {r * std::cos(th), r * std::sin(th), rng.uniform(-1, 1)};
                    break;
                }
                case Shape::Ellipsoid: {
                    Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
                    double n = dir.norm();
                    if (n < 1e-12)
                        dir = {1, 0, 0};
                    else
                        dir /= n;
                    local = dir * std::cbrt(rng.uniform());
                    break;
                }
            }
            scene::GaussianPrimitive g;
            g.position = piece.center + piece.extents.cwiseProduct(local);
            double s = rng.uniform(0.4, 1.0) * std::max(piece.extents.minCoeff(), 0.01);
            s = std::min(s, 0.05);
            g.scale = {s * rng.uniform(0.6, 1.4), s * rng.uniform(0.6, 1.4),
                       s * rng.uniform(0.6, 1.4)};
            g.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(),
                                            rng.normal())
                             .normalized();
            g.opacity = rng.uniform(0.75, 0.95);
            Eigen::Vector3d rgb = part.rgb + Eigen::Vector3d(rng.uniform(-0.05, 0.05),
                                                             rng.uniform(-0.05, 0.05),
                                                             rng.uniform(-0.05, 0.05));
            rgb = rgb.cwiseMax(0.0).cwiseMin(1.0);
            g.color = (rgb - Eigen::Vector3d::Constant(0.5)) / scene::kShC0;
            scn.primitives.push_back(g);
        }
    }
    std::vector<scene::AffordanceMask> masks;
    for (const auto& part : tmpl.parts)
        masks.push_back(scene::AffordanceMask::from_range(tmpl.primitive_count, part.begin,
                                                          part.end, part.affordance_type));
    return {std::move(scn), std::move(masks)};
}

GeneratedScene generate_scene(const std::vector<ObjectTemplate>& templates,
                              const std::vector<InstructionRule>& rules, uint64_t seed,
                              const SceneGenConfig& cfg) {
    RngStream rng(seed, "scenegen");

    auto find_template = [&](const std::string& cat) -> const ObjectTemplate* {
        for (const auto& t : templates)
            if (t.category == cat)
                return &t;
        return nullptr;
    };
    auto rule_instantiable = [&](const InstructionRule& rule) {
        for (const auto& s : rule.steps) {
            const ObjectTemplate* t = find_template(s.category);
            if (!t)
                return false;
            bool has = false;
            for (const auto& p : t->parts)
                if (p.affordance_type == s.affordance_type)
                    has = true;
            if (!has)
                return false;
        }
        return true;
    };

    std::vector<size_t> usable;
    for (size_t r = 0; r < rules.size(); ++r)
        if (rule_instantiable(rules[r]))
            usable.push_back(r);
    if (usable.empty())
        throw std::runtime_error(
            "generate_scene: no rule is instantiable from the given templates");

    const InstructionRule& primary = rules[usable[rng.index(usable.size())]];

    // required categories in first-appearance order, then sampled distractors
    std::vector<std::string> placed_cats;
    for (const auto& s : primary.steps)
        if (std::find(placed_cats.begin(), placed_cats.end(), s.category) ==
            placed_cats.end())
            placed_cats.push_back(s.category);
    size_t required = placed_cats.size();

    std::vector<std::string> avail;
    for (const auto& t : templates) {
        bool in_placed = std::find(placed_cats.begin(), placed_cats.end(), t.category) !=
                         placed_cats.end();
        bool in_avail =
            std::find(avail.begin(), avail.end(), t.category) != avail.end();
        if (!in_placed && !in_avail)
            avail.push_back(t.category);
    }
    rng.shuffle(avail);

    size_t k_max = std::min(avail.size(),
                            cfg.max_objects > required ? cfg.max_objects - required : 0);
    size_t k_min = 0;
    if (required < cfg.min_objects)
        k_min = cfg.min_objects - required;
    if (required >= 3)
        k_min = std::max<size_t>(k_min, 1);
    if (k_min > k_max) {
        if (required >= 3 && k_max == 0)
            throw std::runtime_error(
                "generate_scene: no distractor category available for a scene with >= 3 "
                "objects");
        k_min = k_max;
    }
    size_t k = k_min + (k_max > k_min ? rng.index(k_max - k_min + 1) : 0);
    std::string reserved_distractor;  // never referenced by any sequence
    for (size_t i = 0; i < k; ++i) {
        if (i == 0)
            reserved_distractor = avail[i];
        placed_cats.push_back(avail[i]);
    }

    // place objects with rejection sampling on non-overlapping footprints
    std::vector<ObjectInstance> objects;
    double span = 0.9 * std::sqrt(static_cast<double>(placed_cats.size())) + 0.8;
    for (size_t oi = 0; oi < placed_cats.size(); ++oi) {
        const ObjectTemplate* tmpl = find_template(placed_cats[oi]);
        ObjectInstance inst;
        inst.template_index = static_cast<size_t>(tmpl - templates.data());
        auto [local, masks] = generate_object(*tmpl, hash_combine(seed, oi));
        inst.scn = std::move(local);
        inst.masks = std::move(masks);

        double yaw = rng.uniform(0, 2 * M_PI);
        double scale = rng.uniform(0.85, 1.2);
        bool placed = false;
        for (size_t attempt = 0; attempt < cfg.placement_retries && !placed; ++attempt) {
            scene::RigidScaleTransform t;
            t.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
            t.uniform_scale = scale;
            t.translation = {rng.uniform(-span, span), rng.uniform(-span, span), 0.0};
            Eigen::AlignedBox3d box = world_bounds(inst.scn, t);
            bool clash = false;
            for (const auto& other : objects)
                if (overlaps_xy(box, other.world_box, 0.08))
                    clash = true;
            if (!clash) {
                inst.transform = t;
                inst.world_box = box;
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error("generate_scene: placement failed after " +
                                     std::to_string(cfg.placement_retries) +
                                     " retries (seed " + std::to_string(seed) + ")");
        objects.push_back(std::move(inst));
    }

    std::vector<scene::ScenePart> parts;
    for (const auto& obj : objects)
        parts.push_back({obj.scn, obj.transform, obj.masks});
    scene::ComposedScene composed = scene::compose_scenes(parts);

    // map (object, affordance part index) -> composed mask index
    std::vector<size_t> mask_base(objects.size());
    {
        size_t acc = 0;
        for (size_t oi = 0; oi < objects.size(); ++oi) {
            mask_base[oi] = acc;
            acc += objects[oi].masks.size();
        }
    }
    auto lookup_mask = [&](const StepSpec& s) -> const scene::AffordanceMask& {
        for (size_t oi = 0; oi < placed_cats.size(); ++oi) {
            if (placed_cats[oi] != s.category)
                continue;
            const ObjectTemplate& tmpl = templates[objects[oi].template_index];
            for (size_t pi = 0; pi < tmpl.parts.size(); ++pi)
                if (tmpl.parts[pi].affordance_type == s.affordance_type)
                    return composed.masks[mask_base[oi] + pi];
        }
        throw std::runtime_error("generate_scene: unresolved step (" + s.category + ", " +
                                 s.affordance_type + ")");
    };

    auto instantiate = [&](const InstructionRule& rule) {
        std::map<std::string, std::string> fills;
        for (const auto& [slot, words] : slot_fillers()) {
            bool used = rule.instruction.find(slot) != std::string::npos;
            for (const auto& s : rule.steps)
                used = used || s.text.find(slot) != std::string::npos;
            if (used)
                fills[slot] = words[rng.index(words.size())];
        }
        scene::AffordanceSequence seq;
        seq.instruction = fill_slots(rule.instruction, fills);
        for (const auto& s : rule.steps)
            seq.steps.push_back({fill_slots(s.text, fills), lookup_mask(s)});
        return seq;
    };

    GeneratedScene out;
    out.scn = std::move(composed.scene);
    out.sequences.push_back(instantiate(primary));

    // extra sequences over placed objects, never touching the reserved distractor
    std::vector<size_t> extra_candidates;
    for (size_t r = 0; r < rules.size(); ++r) {
        if (&rules[r] == &primary)
            continue;
        bool ok = true;
        for (const auto& s : rules[r].steps) {
            if (s.category == reserved_distractor)
                ok = false;
            if (std::find(placed_cats.begin(), placed_cats.end(), s.category) ==
                placed_cats.end())
                ok = false;
            else {
                const ObjectTemplate* t = find_template(s.category);
                bool has = false;
                for (const auto& p : t->parts)
                    if (p.affordance_type == s.affordance_type)
                        has = true;
                ok = ok && has;
            }
        }
        if (ok)
            extra_candidates.push_back(r);
    }
    rng.shuffle(extra_candidates);
    for (size_t i = 0; i < extra_candidates.size() && out.sequences.size() < cfg.max_sequences;
         ++i)
        out.sequences.push_back(instantiate(rules[extra_candidates[i]]));
    return out;
}

Manifest emit_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.scenes == 0)
        throw std::runtime_error("emit_dataset: scenes must be >= 1");
    std::filesystem::create_directories(out_dir);

    // per-scene RNG seeded as hash(global_seed, index): parallel == serial
    std::vector<GeneratedScene> generated(cfg.scenes);
    parallel_for(cfg.scenes, [&](size_t i) {
        generated[i] = generate_scene(default_templates(), default_rules(),
                                      hash_combine(cfg.seed, i), cfg.scene_gen);
    });

    Manifest manifest;
    manifest.n_scenes = cfg.scenes;
    char buf[32];
    for (size_t i = 0; i < cfg.scenes; ++i) {
        std::snprintf(buf, sizeof(buf), "scene_%04zu", i);
        std::string id = buf;
        std::string ply = id + ".ply";
        std::string ann = id + ".json";
        scene::save_scene(generated[i].scn, out_dir / ply);
        scene::AnnotationDoc doc;
        doc.scene_path = ply;
        doc.samples = generated[i].sequences;
        scene::save_annotations(doc, out_dir / ann);
        manifest.entries.push_back({id, ply, ann, ""});
        manifest.n_sequences += generated[i].sequences.size();
        for (const auto& s : generated[i].sequences)
            manifest.n_masks += s.steps.size();
    }

    // deterministic split: rank scene ids by content-independent id hash
    std::vector<size_t> order(cfg.scenes);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        uint64_t ha = fnv1a(manifest.entries[a].id);
        uint64_t hb = fnv1a(manifest.entries[b].id);
        if (ha != hb)
            return ha < hb;
        return manifest.entries[a].id < manifest.entries[b].id;
    });
    size_t n_train = static_cast<size_t>(
        std::llround(cfg.split_ratio * static_cast<double>(cfg.scenes)));
    n_train = std::min(n_train, cfg.scenes);
    for (size_t rank = 0; rank < order.size(); ++rank)
        manifest.entries[order[rank]].split = rank < n_train ? "train" : "val";
    manifest.n_train = n_train;
    manifest.n_val = cfg.scenes - n_train;

    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : manifest.entries) {
        h = fnv1a(e.scene, h);
        h = hash_file(out_dir / e.scene, h);
        h = fnv1a(e.annotations, h);
        h = hash_file(out_dir / e.annotations, h);
    }
    manifest.content_hash = hash_hex(h);

    save_manifest(manifest, cfg, out_dir / "manifest.json");
    return manifest;
}

void save_manifest(const Manifest& manifest, const DatasetConfig& cfg,
                   const std::filesystem::path& path) {
    json doc;
    doc["config"] = {{"scenes", cfg.scenes},
                     {"seed", cfg.seed},
                     {"split_ratio", cfg.split_ratio},
                     {"min_objects", cfg.scene_gen.min_objects},
                     {"max_objects", cfg.scene_gen.max_objects},
                     {"max_sequences", cfg.scene_gen.max_sequences}};
    doc["counts"] = {{"scenes", manifest.n_scenes},
                     {"train", manifest.n_train},
                     {"val", manifest.n_val},
                     {"sequences", manifest.n_sequences},
                     {"masks", manifest.n_masks}};
    doc["content_hash"] = manifest.content_hash;
    json scenes = json::array();
    for (const auto& e : manifest.entries)
        scenes.push_back({{"id", e.id},
                          {"scene", e.scene},
                          {"annotations", e.annotations},
                          {"split", e.split}});
    doc["scenes"] = scenes;
    write_file_atomic(path, doc.dump(2) + "\n");
}

Manifest load_manifest(const std::filesystem::path& path) {
    json doc = json::parse(read_text_file(path));
    Manifest m;
    m.content_hash = doc.at("content_hash").get<std::string>();
    m.n_scenes = doc.at("counts").at("scenes").get<size_t>();
    m.n_train = doc.at("counts").at("train").get<size_t>();
    m.n_val = doc.at("counts").at("val").get<size_t>();
    m.n_sequences = doc.at("counts").at("sequences").get<size_t>();
    m.n_masks = doc.at("counts").at("masks").get<size_t>();
    for (const auto& e : doc.at("scenes"))
        m.entries.push_back({e.at("id").get<std::string>(), e.at("scene").get<std::string>(),
                             e.at("annotations").get<std::string>(),
                             e.at("split").get<std::string>()});
    return m;
}

}  // namespace seqsplat::datagen

#include <json.hpp>

#include "cuspflow/group.hpp"
#include "cuspflow/report.hpp"

namespace cuspflow {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw validation_error("unknown key '" + it.key() + "' in " + where);
    }
}

Vec parse_vec(const json& j, const std::string& where) {
    if (!j.is_array()) throw validation_error(where + ": expected array");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
}

Mat parse_mat(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw validation_error(where + ": expected matrix rows");
    int rows = static_cast<int>(j.size());
    int cols = static_cast<int>(j[0].size());
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (static_cast<int>(j[i].size()) != cols)
            throw validation_error(where + ": ragged matrix");
        for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

MobiusMap parse_map(const json& j, int d, const std::string& where) {
    if (j.is_string() && j.get<std::string>() == "identity") return MobiusMap::identity(d);
    if (!j.is_object()) throw validation_error(where + ": expected map object or \"identity\"");
    check_keys(j, {"matrix2", "inversive", "affine", "translation"}, where);
    if (j.contains("matrix2")) {
        auto a = j["matrix2"];
        if (d != 1) throw validation_error(where + ": matrix2 requires dimension 1");
        if (!a.is_array() || a.size() != 4)
            throw validation_error(where + ": matrix2 needs [a,b,c,d]");
        return MobiusMap::from_matrix2(a[0].get<double>(), a[1].get<double>(),
                                       a[2].get<double>(), a[3].get<double>());
    }
    if (j.contains("translation"))
        return MobiusMap::translation(parse_vec(j["translation"], where + ".translation"));
    if (j.contains("inversive")) {
        const auto& o = j["inversive"];
        check_keys(o, {"p", "p_inv", "h", "A"}, where + ".inversive");
        return MobiusMap::inversive(parse_vec(o.at("p"), where + ".p"),
                                    parse_vec(o.at("p_inv"), where + ".p_inv"),
                                    o.at("h").get<double>(),
                                    parse_mat(o.at("A"), where + ".A"));
    }
    if (j.contains("affine")) {
        const auto& o = j["affine"];
        check_keys(o, {"A", "b", "scale"}, where + ".affine");
        double scale = o.contains("scale") ? o.at("scale").get<double>() : 1.0;
        return MobiusMap::affine(parse_mat(o.at("A"), where + ".A"),
                                 parse_vec(o.at("b"), where + ".b"), scale);
    }
    throw validation_error(where + ": no map form given");
}

JValue vec_json(const Vec& v) {
    JValue a = JValue::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

JValue mat_json(const Mat& m) {
    JValue rows = JValue::array();
    for (int i = 0; i < m.rows(); ++i) {
        JValue row = JValue::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

JValue map_json(const MobiusMap& m) {
    JValue o = JValue::object();
    if (m.kind == MobiusMap::Kind::inversive) {
        JValue inv = JValue::object();
        inv["p"] = vec_json(m.p);
        inv["p_inv"] = vec_json(m.p_inv);
        inv["h"] = m.h;
        inv["A"] = mat_json(m.A);
        o["inversive"] = std::move(inv);
    } else {
        JValue aff = JValue::object();
        aff["A"] = mat_json(m.A);
        aff["b"] = vec_json(m.b);
        aff["scale"] = m.scale;
        o["affine"] = std::move(aff);
    }
    return o;
}

} // namespace

GroupModel group_from_string(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw validation_error(origin + ": parse error: " + e.what());
    }
    if (!j.is_object()) throw validation_error(origin + ": expected top-level object");
    check_keys(j,
               {"dimension", "t0", "free_group", "element_cap", "prune_margin",
                "window_margin", "orbit_slack", "generators", "cusps"},
               origin);

    GroupModel g;
    g.d = j.at("dimension").get<int>();
    if (g.d < 1) throw validation_error(origin + ": dimension must be >= 1");
    if (j.contains("t0")) g.t0 = j["t0"].get<double>();
    if (g.t0 <= 0.0) throw validation_error(origin + ": t0 must be > 0");
    if (j.contains("free_group")) g.free_group = j["free_group"].get<bool>();
    if (j.contains("element_cap")) g.element_cap = j["element_cap"].get<long long>();
    if (j.contains("prune_margin")) g.prune_margin = j["prune_margin"].get<double>();
    if (j.contains("window_margin")) g.window_margin = j["window_margin"].get<double>();
    if (j.contains("orbit_slack")) g.orbit_slack = j["orbit_slack"].get<double>();

    if (!j.contains("generators") || !j["generators"].is_array() || j["generators"].empty())
        throw validation_error(origin + ": generators array required");
    int gi = 0;
    for (const auto& gen : j["generators"]) {
        std::string where = origin + ".generators[" + std::to_string(gi++) + "]";
        check_keys(gen, {"label", "matrix2", "inversive", "affine", "translation"}, where);
        g.labels.push_back(gen.contains("label") ? gen["label"].get<std::string>()
                                                 : "g" + std::to_string(gi));
        json m = gen;
        m.erase("label");
        g.generators.push_back(parse_map(m, g.d, where));
    }

    if (j.contains("cusps")) {
        int ci = 0;
        for (const auto& cj : j["cusps"]) {
            std::string where = origin + ".cusps[" + std::to_string(ci++) + "]";
            check_keys(cj, {"p", "g", "rank", "domain_min", "domain_max", "lattice"}, where);
            CuspChart c;
            if (cj.at("p").is_string() && cj["p"].get<std::string>() == "inf")
                c.p = BoundaryPoint::infinity(g.d);
            else
                c.p = BoundaryPoint::at(parse_vec(cj.at("p"), where + ".p"));
            c.g = cj.contains("g") ? parse_map(cj["g"], g.d, where + ".g")
                                   : MobiusMap::identity(g.d);
            c.rank = cj.at("rank").get<int>();
            if (c.rank < 1 || c.rank > g.d)
                throw validation_error(where + ": rank must be in [1, dimension]");
            c.domain_min = parse_vec(cj.at("domain_min"), where + ".domain_min");
            c.domain_max = parse_vec(cj.at("domain_max"), where + ".domain_max");
            if (c.domain_min.size() != g.d || c.domain_max.size() != g.d)
                throw validation_error(where + ": domain box must have length = dimension");
            if (cj.contains("lattice")) {
                int li = 0;
                for (const auto& lj : cj["lattice"]) {
                    std::string lwhere = where + ".lattice[" + std::to_string(li++) + "]";
                    check_keys(lj, {"word", "matrix2", "inversive", "affine", "translation"},
                               lwhere);
                    LatticeGen lg;
                    json m = lj;
                    m.erase("word");
                    lg.map = parse_map(m, g.d, lwhere);
                    if (lg.map.kind != MobiusMap::Kind::affine)
                        throw validation_error(lwhere + ": lattice generators must fix infinity");
                    if (lj.contains("word"))
                        for (const auto& l : lj["word"]) lg.word.push_back(l.get<int>());
                    c.lattice.push_back(std::move(lg));
                }
            }
            if (static_cast<int>(c.lattice.size()) != c.rank)
                throw validation_error(where + ": need exactly rank lattice generators");
            // chart must send the cusp point to infinity
            if (!apply(c.g, c.p).inf)
                throw validation_error(where + ": g does not map p to infinity");
            // lattice generators must commute (translations of a Bieberbach stabilizer)
            for (std::size_t a = 0; a < c.lattice.size(); ++a)
                for (std::size_t b = a + 1; b < c.lattice.size(); ++b) {
                    auto ab = compose(c.lattice[a].map, c.lattice[b].map);
                    auto ba = compose(c.lattice[b].map, c.lattice[a].map);
                    if ((ab.b - ba.b).norm() > 1e-9)
                        throw validation_error(where + ": lattice generators do not commute");
                }
            g.cusps.push_back(std::move(c));
        }
    }
    return g;
}

GroupModel load_group(const std::string& path) {
    return group_from_string(read_file(path), path);
}

std::string group_to_string(const GroupModel& g) {
    JValue j = JValue::object();
    j["dimension"] = g.d;
    j["t0"] = g.t0;
    j["free_group"] = g.free_group;
    j["element_cap"] = g.element_cap;
    j["prune_margin"] = g.prune_margin;
    j["window_margin"] = g.window_margin;
    j["orbit_slack"] = g.orbit_slack;
    JValue gens = JValue::array();
    for (std::size_t i = 0; i < g.generators.size(); ++i) {
        JValue o = map_json(g.generators[i]);
        JValue out = JValue::object();
        out["label"] = g.labels[i];
        if (g.generators[i].kind == MobiusMap::Kind::inversive)
            out["inversive"] = std::move(o["inversive"]);
        else
            out["affine"] = std::move(o["affine"]);
        gens.push_back(std::move(out));
    }
    j["generators"] = std::move(gens);
    JValue cusps = JValue::array();
    for (const auto& c : g.cusps) {
        JValue o = JValue::object();
        if (c.p.inf)
            o["p"] = "inf";
        else
            o["p"] = vec_json(c.p.v);
        if (c.g.is_identity(0.0))
            o["g"] = "identity";
        else
            o["g"] = map_json(c.g);
        o["rank"] = c.rank;
        o["domain_min"] = vec_json(c.domain_min);
        o["domain_max"] = vec_json(c.domain_max);
        JValue lat = JValue::array();
        for (const auto& lg : c.lattice) {
            JValue lo = map_json(lg.map);
            JValue wd = JValue::array();
            for (int l : lg.word) wd.push_back(static_cast<long long>(l));
            lo["word"] = std::move(wd);
            lat.push_back(std::move(lo));
        }
        o["lattice"] = std::move(lat);
        cusps.push_back(std::move(o));
    }
    j["cusps"] = std::move(cusps);
    return j.dump();
}

void save_group(const GroupModel& g, const std::string& path) {
    write_file_atomic(path, group_to_string(g));
}

} // namespace cuspflow

#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "error.hpp"

namespace gridcast {

inline constexpr int kPoiCategoryCount = 11;
inline constexpr int kOtherServicesCategory = 11;

struct PoiCategory {
  int id = 0;  // 1..11
  std::string_view name;
};

inline constexpr std::array<std::string_view, kPoiCategoryCount> kPoiCategoryNames = {
    "Utilities and construction",
    "Manufacturing",
    "Retail and wholesale trade",
    "Transportation and warehousing",
    "Business and professional services",
    "Educational services",
    "Health care and social assistance",
    "Arts, entertainment, and recreation",
    "Accommodation and food services",
    "Public administration",
    "Other services",
};

namespace detail {

struct CategoryEntry {
  std::string_view top_category;
  int id;
};

// NAICS top_category strings per group. "Freight Transportation Arrangement"
// is listed under groups 4 and 5 in the source taxonomy; it is kept once,
// under group 4.
inline constexpr CategoryEntry kCategoryTable[] = {
    // 1 Utilities and construction
    {"Building Material and Supplies Dealers", 1},
    {"Foundation, Structure, and Building Exterior Contractors", 1},
    {"Building Equipment Contractors", 1},
    {"Building Finishing Contractors", 1},
    {"Other Specialty Trade Contractors", 1},
    {"Utility System Construction", 1},
    {"Electric Power Generation, Transmission and Distribution", 1},
    // 2 Manufacturing
    {"Bakeries and Tortilla Manufacturing", 2},
    {"Beverage Manufacturing", 2},
    {"Other Miscellaneous Manufacturing", 2},
    {"Glass and Glass Product Manufacturing", 2},
    {"Other Wood Product Manufacturing", 2},
    {"Metalworking Machinery Manufacturing", 2},
    {"Steel Product Manufacturing from Purchased Steel", 2},
    {"Greenhouse, Nursery, and Floriculture Production", 2},
    {"Printing and Related Support Activities", 2},
    // 3 Retail and wholesale trade
    {"Shoe Stores", 3},
    {"Grocery Stores", 3},
    {"Clothing Stores", 3},
    {"Electronics and Appliance Stores", 3},
    {"Health and Personal Care Stores", 3},
    {"Gasoline Stations", 3},
    {"Used Merchandise Stores", 3},
    {"Automotive Parts, Accessories, and Tire Stores", 3},
    {"Jewelry, Luggage, and Leather Goods Stores", 3},
    {"Beer, Wine, and Liquor Stores", 3},
    {"Specialty Food Stores", 3},
    {"Home Furnishings Stores", 3},
    {"Other Motor Vehicle Dealers", 3},
    {"Office Supplies, Stationery, and Gift Stores", 3},
    {"General Merchandise Stores, including Warehouse Clubs and Supercenters", 3},
    {"Department Stores", 3},
    {"Book Stores and News Dealers", 3},
    {"Automobile Dealers", 3},
    {"Furniture Stores", 3},
    {"Lawn and Garden Equipment and Supplies Stores", 3},
    {"Hardware, and Plumbing and Heating Equipment and Supplies Merchant Wholesalers", 3},
    {"Machinery, Equipment, and Supplies Merchant Wholesalers", 3},
    {"Drugs and Druggists' Sundries Merchant Wholesalers", 3},
    {"Chemical and Allied Products Merchant Wholesalers", 3},
    {"Petroleum and Petroleum Products Merchant Wholesalers", 3},
    {"Motor Vehicle and Motor Vehicle Parts and Supplies Merchant Wholesalers", 3},
    {"Miscellaneous Durable Goods Merchant Wholesalers", 3},
    {"Grocery and Related Product Merchant Wholesalers", 3},
    {"Household Appliances and Electrical and Electronic Goods Merchant Wholesalers", 3},
    {"Lumber and Other Construction Materials Merchant Wholesalers", 3},
    {"Direct Selling Establishments", 3},
    {"Other Miscellaneous Store Retailers", 3},
    {"Professional and Commercial Equipment and Supplies Merchant Wholesalers", 3},
    {"Sporting Goods, Hobby, and Musical Instrument Stores", 3},
    // 4 Transportation and warehousing
    {"Support Activities for Air Transportation", 4},
    {"Specialized Freight Trucking", 4},
    {"Rail Transportation", 4},
    {"Taxi and Limousine Service", 4},
    {"Other Transit and Ground Passenger Transportation", 4},
    {"Transit and Ground Passenger Transportation", 4},
    {"Scenic and Sightseeing Transportation", 4},
    {"Support Activities for Road Transportation", 4},
    {"Freight Transportation Arrangement", 4},
    {"Support Activities for Water Transportation", 4},
    {"Warehousing and Storage", 4},
    {"Automotive Equipment Rental and Leasing", 4},
    {"Commercial and Industrial Machinery and Equipment Rental and Leasing", 4},
    {"Interurban and Rural Bus Transportation", 4},
    {"Postal Service", 4},
    // 5 Business and professional services
    {"Investigation and Security Services", 5},
    {"Activities Related to Credit Intermediation", 5},
    {"Offices of Real Estate Agents and Brokers", 5},
    {"Other Professional, Scientific, and Technical Services", 5},
    {"Accounting, Tax Preparation, Bookkeeping, and Payroll Services", 5},
    {"Management, Scientific, and Technical Consulting Services", 5},
    {"Advertising, Public Relations, and Related Services", 5},
    {"Legal Services", 5},
    {"Data Processing, Hosting, and Related Services", 5},
    {"Architectural, Engineering, and Related Services", 5},
    {"Specialized Design Services", 5},
    {"Business Support Services", 5},
    {"Employment Services", 5},
    {"Travel Arrangement and Reservation Services", 5},
    {"Management of Companies and Enterprises", 5},
    {"Activities Related to Real Estate", 5},
    {"Agencies, Brokerages, and Other Insurance Related Activities", 5},
    {"Cable and Other Subscription Programming", 5},
    {"Consumer Goods Rental", 5},
    {"Depository Credit Intermediation", 5},
    {"General Rental Centers", 5},
    {"Insurance Carriers", 5},
    {"Lessors of Real Estate", 5},
    {"Motion Picture and Video Industries", 5},
    {"Nondepository Credit Intermediation", 5},
    {"Other Financial Investment Activities", 5},
    {"Other Information Services", 5},
    {"Radio and Television Broadcasting", 5},
    {"Sound Recording Industries", 5},
    {"Wired and Wireless Telecommunications Carriers", 5},
    // 6 Educational services
    {"Elementary and Secondary Schools", 6},
    {"Colleges, Universities, and Professional Schools", 6},
    {"Junior Colleges", 6},
    {"Technical and Trade Schools", 6},
    {"Other Schools and Instruction", 6},
    {"Educational Support Services", 6},
    // 7 Health care and social assistance
    {"Offices of Physicians", 7},
    {"Offices of Other Health Practitioners", 7},
    {"Specialty (except Psychiatric and Substance Abuse) Hospitals", 7},
    {"General Medical and Surgical Hospitals", 7},
    {"Psychiatric and Substance Abuse Hospitals", 7},
    {"Outpatient Care Centers", 7},
    {"Nursing Care Facilities (Skilled Nursing Facilities)", 7},
    {"Continuing Care Retirement Communities and Assisted Living Facilities for the Elderly", 7},
    {"Home Health Care Services", 7},
    {"Individual and Family Services", 7},
    {"Community Food and Housing, and Emergency and Other Relief Services", 7},
    {"Residential Intellectual and Developmental Disability, Mental Health, and Substance Abuse Facilities", 7},
    {"Child Day Care Services", 7},
    {"Medical and Diagnostic Laboratories", 7},
    {"Nursing and Residential Care Facilities", 7},
    {"Offices of Dentists", 7},
    {"Other Ambulatory Health Care Services", 7},
    // 8 Arts, entertainment, and recreation
    {"Museums, Historical Sites, and Similar Institutions", 8},
    {"Amusement Parks and Arcades", 8},
    {"Spectator Sports", 8},
    {"Other Amusement and Recreation Industries", 8},
    {"Performing Arts Companies", 8},
    {"Promoters of Performing Arts, Sports, and Similar Events", 8},
    {"Social Advocacy Organizations", 8},
    {"Civic and Social Organizations", 8},
    {"Gambling Industries", 8},
    // 9 Accommodation and food services
    {"Traveler Accommodation", 9},
    {"Special Food Services", 9},
    {"Restaurants and Other Eating Places", 9},
    {"Drinking Places (Alcoholic Beverages)", 9},
    {"RV (Recreational Vehicle) Parks and Recreational Camps", 9},
    // 10 Public administration
    {"Justice, Public Order, and Safety Activities", 10},
    {"Administration of Economic Programs", 10},
    {"Administration of Human Resource Programs", 10},
    {"National Security and International Affairs", 10},
    // 11 Other services
    {"Florists", 11},
    {"Other Personal Services", 11},
    {"Religious Organizations", 11},
    {"Personal and Household Goods Repair and Maintenance", 11},
    {"Drycleaning and Laundry Services", 11},
    {"Death Care Services", 11},
    {"Personal Care Services", 11},
    {"Social Assistance", 11},
    {"Grantmaking and Giving Services", 11},
    {"Couriers and Express Delivery Services", 11},
    {"Waste Management and Remediation Services", 11},
    {"Remediation and Other Waste Management Services", 11},
    {"Services to Buildings and Dwellings", 11},
    {"Waste Treatment and Disposal", 11},
    {"Waste Collection", 11},
    {"Automotive Repair and Maintenance", 11},
    {"Electronic and Precision Equipment Repair and Maintenance", 11},
};

/// Built once; throws if two entries share a string.
inline const std::unordered_map<std::string_view, int>& category_index() {
  static const auto index = [] {
    std::unordered_map<std::string_view, int> m;
    for (const auto& e : kCategoryTable) {
      require(e.id >= 1 && e.id <= kPoiCategoryCount, "category table: bad id for '", e.top_category, "'");
      require(m.emplace(e.top_category, e.id).second, "category table: duplicate entry '", e.top_category, "'");
    }
    return m;
  }();
  return index;
}

}  // namespace detail

enum class CategoryFallback { kStrict, kLenient };

inline std::span<const detail::CategoryEntry> poi_category_vocabulary() { return detail::kCategoryTable; }

/// Exact-match lookup. Unknown strings raise in strict mode and map to
/// "Other services" in lenient mode.
inline PoiCategory map_top_category(std::string_view top_category,
                                    CategoryFallback fallback = CategoryFallback::kLenient) {
  const auto& index = detail::category_index();
  const auto it = index.find(top_category);
  int id = kOtherServicesCategory;
  if (it != index.end()) {
    id = it->second;
  } else if (fallback == CategoryFallback::kStrict) {
    fail("unknown POI top_category '", top_category, "'");
  }
  return {id, kPoiCategoryNames[static_cast<std::size_t>(id - 1)]};
}

}  // namespace gridcast
